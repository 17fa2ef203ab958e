use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcis::checkpoint::Checkpoint;
use pcis::predictions::{format_instances, parse_instances};
use pcis::scene_file::{encode_csv, read_scene, write_scene};
use pcis_core::model::{backbone_forward, ModelParams};
use pcis_core::synth::{generate_scene, SynthConfig};
use pcis_core::{InstancePrediction, ModelConfig, Scene};

fn pcis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcis")).args(args).output().expect("run pcis")
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

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

const SMALL: [&str; 6] = ["--set", "num_train=3", "--set", "num_test=2", "--set", "points_per_scene=300"];

fn small_split(dir: &Path) -> PathBuf {
    let out = dir.join("data");
    let mut args = vec!["synth", "--out", p(&out), "--seed", "3"];
    args.extend(SMALL);
    let o = pcis(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn synth_default_writes_250_files() {
    let tmp = tempfile::tempdir().unwrap();
    let o = pcis(&["synth", "--out", p(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(files(&tmp.path().join("train")).len(), 200);
    assert_eq!(files(&tmp.path().join("test")).len(), 50);
    assert!(stdout(&o).contains("200 train and 50 test"));
    let s = read_scene(&tmp.path().join("test/scene_00249.pcis"), None).unwrap();
    assert_eq!(s.len(), 1024);
}

#[test]
fn synth_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = small_split(&tmp.path().join("a"));
    let b = small_split(&tmp.path().join("b"));
    for sub in ["train", "test"] {
        let (fa, fb) = (files(&a.join(sub)), files(&b.join(sub)));
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(x.file_name(), y.file_name());
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }
    // Files hold exactly the in-memory scenes.
    let cfg = SynthConfig { seed: 3, num_train: 3, num_test: 2, points_per_scene: 300, ..SynthConfig::default() };
    assert_eq!(read_scene(&a.join("train/scene_00001.pcis"), None).unwrap(), generate_scene(&cfg, 1).unwrap());
}

#[test]
fn synth_unwritable_directory_names_path() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let target = blocker.join("sub");
    let o = pcis(&["synth", "--out", p(&target)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains(p(&blocker)), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(pcis(&["synth"]).status.code(), Some(2));
    assert_eq!(pcis(&["frobnicate"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let o = pcis(&["synth", "--out", p(tmp.path()), "--set", "bogus_key=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus_key"));
}

#[test]
fn zero_epoch_checkpoint_equals_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_split(tmp.path());
    let ck = tmp.path().join("m.ckpt");
    let o = pcis(&["train", "--data", p(&data.join("train")), "--checkpoint", p(&ck), "--epochs", "0", "--seed", "11"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let c = Checkpoint::read(&ck).unwrap();
    assert_eq!(c.params, ModelParams::init(&ModelConfig::default(), 11).unwrap());
    assert_eq!(c.seed, 11);
    assert_eq!(c.optimizer.unwrap().step, 0);
    let table = std::fs::read_to_string(tmp.path().join("m.losses.tsv")).unwrap();
    assert_eq!(table, "epoch\tce\tsal_initial\tsal_refined\ttotal\n");
}

#[test]
fn corrupt_scene_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_split(tmp.path());
    let victim = data.join("train/scene_00001.pcis");
    let mut bytes = std::fs::read(&victim).unwrap();
    bytes.truncate(bytes.len() - 5);
    std::fs::write(&victim, bytes).unwrap();
    let ck = tmp.path().join("m.ckpt");
    let o = pcis(&["train", "--data", p(&data.join("train")), "--checkpoint", p(&ck), "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("scene_00001.pcis"), "{}", stderr(&o));

    let bad_color = tmp.path().join("bad.csv");
    std::fs::write(&bad_color, "x,y,z,r,g,b,semantic,instance\n0,0,0,1.5,0,0,0,0\n").unwrap();
    let o = pcis(&["train", "--data", p(&bad_color), "--checkpoint", p(&ck)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("bad.csv") && stderr(&o).contains("colors"), "{}", stderr(&o));
}

#[test]
fn train_and_infer_on_training_scene_recovers_instances() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { seed: 5, num_train: 16, points_per_scene: 512, ..SynthConfig::default() };
    let dir = tmp.path().join("train");
    std::fs::create_dir_all(&dir).unwrap();
    let scenes: Vec<Scene> = (0..16).map(|i| generate_scene(&cfg, i).unwrap()).collect();
    for s in &scenes {
        write_scene(&dir.join(format!("{}.pcis", s.id)), s).unwrap();
    }
    let ck = tmp.path().join("m.ckpt");
    let o = pcis(&["train", "--data", p(&dir), "--checkpoint", p(&ck), "--epochs", "200"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(tmp.path().join("m.losses.tsv")).unwrap();
    assert_eq!(table.lines().count(), 201);

    let out = tmp.path().join("pred");
    let scene_path = dir.join("scene_00000.pcis");
    let o = pcis(&["infer", "--checkpoint", p(&ck), "--out", p(&out), "--ply", p(&scene_path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let preds = parse_instances(&std::fs::read_to_string(out.join("scene_00000.instances.txt")).unwrap()).unwrap();
    let scene = &scenes[0];
    for (members, class) in scene.instance_members().iter().zip(scene.instance_classes()) {
        let best = preds
            .iter()
            .filter(|p| p.class_label == class)
            .map(|p| pcis_core::eval::point_iou(&p.point_indices, members).unwrap())
            .fold(0.0, f64::max);
        assert!(best >= 0.5, "instance of class {class}: best IoU {best}");
    }
    for suffix in ["semantic.txt", "embeddings.txt", "clusters.txt", "ply"] {
        assert!(out.join(format!("scene_00000.{suffix}")).exists(), "{suffix}");
    }
    let ply = std::fs::read_to_string(out.join("scene_00000.ply")).unwrap();
    assert!(ply.starts_with("ply\nformat ascii 1.0\n"));
    assert!(ply.contains("element vertex 512\n"));
}

#[test]
fn infer_without_gcn_writes_initial_embeddings() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_split(tmp.path());
    let ck = tmp.path().join("m.ckpt");
    let o = pcis(&[
        "train", "--data", p(&data.join("train")), "--checkpoint", p(&ck), "--epochs", "1", "--set", "gcn_layers=0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("pred");
    let scene_path = data.join("test/scene_00003.pcis");
    let o = pcis(&["infer", "--checkpoint", p(&ck), "--out", p(&out), p(&scene_path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let params = Checkpoint::read(&ck).unwrap().params;
    let scene = read_scene(&scene_path, None).unwrap();
    let initial = backbone_forward(&scene, &params).unwrap().initial_embeddings;
    let written = std::fs::read_to_string(out.join("scene_00003.embeddings.txt")).unwrap();
    let parsed: Vec<Vec<f64>> = written
        .lines()
        .map(|l| l.split(' ').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(parsed.len(), scene.len());
    for (row, expect) in parsed.iter().zip(initial.rows()) {
        assert_eq!(row.as_slice(), expect.as_slice().unwrap());
    }
}

#[test]
fn infer_empty_list_and_class_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_split(tmp.path());
    let ck = tmp.path().join("m.ckpt");
    assert!(pcis(&["train", "--data", p(&data.join("train")), "--checkpoint", p(&ck), "--epochs", "0"]).status.success());
    let out = tmp.path().join("pred");
    let o = pcis(&["infer", "--checkpoint", p(&ck), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!out.exists());

    let mut s = read_scene(&data.join("test/scene_00003.pcis"), None).unwrap();
    s.num_classes = 3;
    s.semantic_labels.iter_mut().for_each(|l| *l = (*l).min(2));
    let odd = tmp.path().join("odd.pcis");
    write_scene(&odd, &s).unwrap();
    let o = pcis(&["infer", "--checkpoint", p(&ck), "--out", p(&out), p(&odd)]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("declares 3 classes") && err.contains("num_classes=4"), "{err}");
}

fn write_preds(dir: &Path, scene: &Scene, semantic: &[usize], instances: &[InstancePrediction]) {
    std::fs::create_dir_all(dir).unwrap();
    let sem: String = semantic.iter().map(|c| format!("{c}\n")).collect();
    std::fs::write(dir.join(format!("{}.semantic.txt", scene.id)), sem).unwrap();
    std::fs::write(dir.join(format!("{}.instances.txt", scene.id)), format_instances(instances)).unwrap();
}

fn perfect(scene: &Scene) -> Vec<InstancePrediction> {
    scene
        .instance_members()
        .into_iter()
        .zip(scene.instance_classes())
        .map(|(m, c)| InstancePrediction { point_indices: m, class_label: c, confidence: 0.9 })
        .collect()
}

#[test]
fn eval_perfect_and_empty_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_split(tmp.path());
    let gt = data.join("test");
    let scenes: Vec<Scene> = files(&gt).iter().map(|f| read_scene(f, None).unwrap()).collect();
    let good = tmp.path().join("good");
    let empty = tmp.path().join("empty");
    for s in &scenes {
        let labels: Vec<usize> = s.semantic_labels.iter().map(|&l| l as usize).collect();
        write_preds(&good, s, &labels, &perfect(s));
        write_preds(&empty, s, &labels, &[]);
    }
    let o = pcis(&["eval", "--pred", p(&good), "--gt", p(&gt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("mAP@0.5 = 1.000000") && text.contains("mIoU = 1.000000"), "{text}");
    let table = std::fs::read_to_string(good.join("eval.tsv")).unwrap();
    assert!(table.starts_with("metric\tthreshold\tclass\tvalue\ttp\tfp\tfn\n"));

    let o = pcis(&["eval", "--pred", p(&empty), "--gt", p(&gt), "--sweep"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mAP@0.5 = 0.000000"));
    assert!(stdout(&o).contains("mAP@0.95 = 0.000000"));
}

#[test]
fn eval_handcrafted_fixture_matches_hand_enumeration() {
    // Two scenes, three GT objects of class 1 (plus floor).
    // Ranked class-1 predictions: 0.9 hit (scene a), 0.8 miss, 0.7 hit
    // (scene b). Precision 1, 1/2, 2/3; envelope 1, 2/3, 2/3; hits at ranks
    // 1 and 3 over 3 GT give AP = (1 + 2/3) / 3.
    let tmp = tempfile::tempdir().unwrap();
    let gt_dir = tmp.path().join("gt");
    std::fs::create_dir_all(&gt_dir).unwrap();
    let a = "x,y,z,r,g,b,semantic,instance\n";
    let rows = |ids: &[(i32, i32)]| -> String {
        ids.iter().map(|(s, i)| format!("0,0,0,0.5,0.5,0.5,{s},{i}\n")).collect()
    };
    std::fs::write(gt_dir.join("a.csv"), format!("{a}{}", rows(&[(0, 0), (0, 0), (1, 1), (1, 1), (1, 2), (1, 2)]))).unwrap();
    std::fs::write(gt_dir.join("b.csv"), format!("{a}{}", rows(&[(0, 0), (1, 1), (1, 1), (1, 1)]))).unwrap();
    let pred = tmp.path().join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::write(pred.join("a.semantic.txt"), "0\n0\n1\n1\n1\n1\n").unwrap();
    std::fs::write(pred.join("a.instances.txt"), "1 0.9 2 3\n1 0.8 0 1 4\n0 0.5 0 1\n").unwrap();
    std::fs::write(pred.join("b.semantic.txt"), "0\n1\n1\n1\n").unwrap();
    std::fs::write(pred.join("b.instances.txt"), "1 0.7 1 2 3\n").unwrap();
    let o = pcis(&["eval", "--pred", p(&pred), "--gt", p(&gt_dir), "--num-classes", "2", "--thresholds", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let expect = (1.0 + 2.0 / 3.0) / 3.0;
    let table = std::fs::read_to_string(pred.join("eval.tsv")).unwrap();
    let row = table.lines().find(|l| l.starts_with("AP\t0.50\t1\t")).unwrap();
    assert_eq!(row, format!("AP\t0.50\t1\t{expect:.6}\t2\t1\t1"));
    // Floor: one of two GT floors found.
    assert!(table.contains("AP\t0.50\t0\t0.500000\t1\t0\t1"));
}

#[test]
fn eval_id_mismatch_lists_difference() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_split(tmp.path());
    let gt = data.join("test");
    let scene = read_scene(&gt.join("scene_00003.pcis"), None).unwrap();
    let pred = tmp.path().join("pred");
    write_preds(&pred, &scene, &vec![0; scene.len()], &[]);
    let o = pcis(&["eval", "--pred", p(&pred), "--gt", p(&gt)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("scene_00004"), "{}", stderr(&o));
}

#[test]
fn csv_scenes_are_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { num_train: 3, points_per_scene: 200, ..SynthConfig::default() };
    for i in 0..3 {
        let s = generate_scene(&cfg, i).unwrap();
        std::fs::write(tmp.path().join(format!("{}.csv", s.id)), encode_csv(&s)).unwrap();
    }
    let ck = tmp.path().join("m.ckpt");
    let o = pcis(&["train", "--data", p(tmp.path()), "--checkpoint", p(&ck), "--epochs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("on 3 scenes"));
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    for seed in ["0", "1", "2", "3", "4"] {
        let o = pcis(&["gradcheck", "--seed", seed]);
        assert!(o.status.success(), "seed {seed}: {}", stdout(&o));
        assert!(stdout(&o).contains("gradcheck passed"));
    }
    let o = pcis(&["gradcheck", "--corrupt", "gcn1.f"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("gcn1.f"), "{}", stderr(&o));
    assert!(stdout(&o).contains("gcn1.f\t") && stdout(&o).contains("FAIL"));
}

#[test]
fn ablate_small_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_split(tmp.path());
    let table = tmp.path().join("ablation.tsv");
    let ckpts = tmp.path().join("ckpts");
    let o = pcis(&[
        "ablate", "--data", p(&data), "--out", p(&table), "--checkpoints", p(&ckpts), "--epochs", "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&table).unwrap();
    assert_eq!(text, stdout(&o));
    assert_eq!(text.lines().count(), 7);
    assert_eq!(files(&ckpts).len(), 6);
    let c = Checkpoint::read(&ckpts.join("vanillaLoss+gcn1.ckpt")).unwrap();
    assert_eq!(c.settings.model.gcn_layers, 1);
}
