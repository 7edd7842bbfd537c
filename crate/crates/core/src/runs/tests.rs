use super::*;

const TINY: &str = r#"
[system]
kind = "air3d"

[network]
hidden_layers = 2
hidden_width = 8

[schedule]
batch_size = 32
pretrain_iters = 3
curriculum_iters = 3
checkpoint_every = 2
seed = 5

[grid]
resolution = [7, 7, 6]
snapshots = [0.0, 1.0]
"#;

fn tiny() -> RunConfig {
    RunConfig::parse(TINY).unwrap()
}

#[test]
fn training_runs_are_reproducible_and_reusable() {
    let root = tempfile::tempdir().unwrap();
    let other = tempfile::tempdir().unwrap();
    let a = train_run(&tiny(), "tiny", root.path()).unwrap();
    let b = train_run(&tiny(), "tiny", other.path()).unwrap();
    assert!(!a.reused && !b.reused);
    let name = a.dir.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("tiny-") && name.ends_with("-s5"), "{name}");
    assert_eq!(checksums(&a.dir).unwrap(), checksums(&b.dir).unwrap());
    assert!(verify_checksums(&a.dir).unwrap());
    let listed = fs::read_to_string(a.dir.join(CHECKSUMS)).unwrap();
    for f in [RUN_CONFIG, RUN_META, FINAL_CHECKPOINT, "checkpoint_0000002.ckpt"] {
        assert!(listed.contains(f), "{f}");
    }
    assert!(!listed.contains(LOSS_LOG));
    let again = train_run(&tiny(), "tiny", root.path()).unwrap();
    assert!(again.reused);
    assert_eq!(again.checkpoint.params, a.checkpoint.params);
    assert_eq!(again.log.len(), a.log.len());
    // the resolved config on disk reparses to the same run
    let back = RunConfig::load(&a.dir.join(RUN_CONFIG)).unwrap();
    assert_eq!(run_dir_name("tiny", &back).unwrap(), name);
}

#[test]
fn changed_files_fail_verification() {
    let root = tempfile::tempdir().unwrap();
    let run = train_run(&tiny(), "tiny", root.path()).unwrap();
    fs::write(run.dir.join(RUN_META), "{}").unwrap();
    assert!(!verify_checksums(&run.dir).unwrap());
    assert!(matches!(train_run(&tiny(), "tiny", root.path()), Err(Error::Format(_))));
}

#[test]
fn grid_runs_write_one_file_per_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let paths = grid_run(&tiny(), dir.path()).unwrap();
    assert_eq!(paths.len(), 2);
    let sys = tiny().system.build().unwrap();
    let terminal = ValueGrid::load(&dir.path().join(grid_file_name(1.0))).unwrap();
    for i in 0..terminal.len() {
        assert_eq!(terminal.values[i], sys.target_l(&terminal.node(i)).unwrap());
    }
    let five = RunConfig::parse("[system]\nkind = \"stationary\"\ndim = 5\n[grid]\nresolution = [3, 3, 3, 3, 3]\n").unwrap();
    let err = grid_run(&five, dir.path()).unwrap_err();
    assert!(err.to_string().contains("dimension"), "{err}");
}

#[test]
fn evaluation_and_sweeps() {
    let root = tempfile::tempdir().unwrap();
    let sys = tiny().system.build().unwrap();
    let grid = gridsolver::solve(&sys, &[7, 7, 6], &[0.0]).unwrap().remove(0);
    let report = sweep(&tiny(), "abl", &[Activation::Sine, Activation::Relu], &[1, 2, 3], &grid, "g", root.path()).unwrap();
    assert_eq!(report.records.len(), 6);
    let relu: Vec<f64> = report.records[3..].iter().map(|r| r.mse).collect();
    assert_eq!(report.summary_for(Activation::Relu).unwrap().median_mse, median(&relu));
    assert!(report.records.iter().all(|r| r.system == "air3d"));
    assert_eq!(report.records[4].seed, 2);
    report.write(root.path()).unwrap();
    let csv = fs::read_to_string(root.path().join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    // a checkpoint against a grid of another system is rejected
    let mut other = grid.clone();
    other.system = "two_vehicle".into();
    let ck = Checkpoint::load(Path::new(&report.records[0].checkpoint)).unwrap();
    assert!(matches!(evaluate(&ck, "c", &other, "g"), Err(Error::SystemMismatch(..))));
}

#[test]
fn medians() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
}

#[test]
fn rollouts_from_grid_directories() {
    let dir = tempfile::tempdir().unwrap();
    let grids = dir.path().join("grids");
    grid_run(&tiny(), &grids).unwrap();
    let src = LoadedSource::load(&grids).unwrap();
    assert!(matches!(src, LoadedSource::Grid(ref g) if g.grids().len() == 2));
    let cfg = RunConfig::parse(&format!(
        "{TINY}\n[scenario]\ndt = 0.05\nstarts = [[0.6, 0.5, 0.0], [0.1, 0.0, 3.0]]\n[scenario.filter]\nmargin = 0.1\nnominal = {{ constant = [0.0] }}\n"
    ))
    .unwrap();
    let sys = cfg.system.build().unwrap();
    let out = dir.path().join("roll");
    let summary = rollout_run(&sys, &src, cfg.scenario().unwrap(), dir.path(), true, &out).unwrap();
    assert_eq!(summary.len(), 2);
    assert!(out.join("trajectory_001.csv").exists() && out.join("summary.json").exists());
    assert!(summary.iter().all(|s| s.closest_approach.is_some()));
    let wrong = SystemSpec::two_vehicle(Default::default());
    assert!(rollout_run(&wrong, &src, cfg.scenario().unwrap(), dir.path(), false, &out).is_err());
    assert!(LoadedSource::load(&out.join("summary.json")).is_err());
}
