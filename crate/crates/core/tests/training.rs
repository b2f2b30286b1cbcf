use std::fs;
use std::path::Path;

use scvae::data::SynthParams;
use scvae::harness::{
    parse_config, run_depth_sweep, run_table1, train, DatasetSpec, RunConfig,
};
use scvae::{Error, Preset, SkipMode};

fn desk(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::new(DatasetSpec::Synth(SynthParams {
        seed: 1,
        n_per_class: 60,
        n_classes: 4,
        dim: 16,
    }));
    cfg.network.hidden_width = 16;
    cfg.network.latent_dim = 4;
    cfg.batch_size = 32;
    cfg.epochs = 5;
    cfg.eval_samples = 5;
    cfg.probe_size = 48;
    cfg.classifier_epochs = 3;
    cfg.output_dir = dir.to_path_buf();
    cfg
}

fn bytes(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn shallow_vae_improves_over_five_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk(dir.path()).with_preset(Preset::Vae1L);
    let log = train(&cfg).unwrap();
    let elbo: Vec<f64> = log.records.iter().map(|r| r.train_elbo).collect();
    assert_eq!(elbo.len(), 5);
    assert!(elbo[4] > elbo[0], "{elbo:?}");
    assert!(log.records.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
    for p in log.artifacts.all() {
        assert!(p.is_file(), "{} missing", p.display());
    }
    let metrics = fs::read_to_string(&log.artifacts.metrics).unwrap();
    for key in ["\"nll\"", "\"accuracy\"", "\"preset\"", "\"seed\"", "\"epochs\"", "\"S\""] {
        assert!(metrics.contains(key), "{key} missing from {metrics}");
    }
    assert!((0.0..=1.0).contains(&log.metrics.accuracy));
}

#[test]
fn identical_config_gives_identical_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut ca = desk(a.path()).with_preset(Preset::Scvae);
    ca.preset_depth = 3;
    let ca = ca.with_preset(Preset::Scvae);
    let mut cb = ca.clone();
    cb.output_dir = b.path().to_path_buf();
    let la = train(&ca).unwrap();
    let lb = train(&cb).unwrap();
    let strip = |l: &scvae::harness::RunLog| {
        l.records.iter().map(|r| (r.epoch, r.train_elbo, r.val_elbo)).collect::<Vec<_>>()
    };
    assert_eq!(strip(&la), strip(&lb));
    assert_eq!(la.reports, lb.reports);
    assert_eq!(la.metrics, lb.metrics);
    for (pa, pb) in la.artifacts.all().into_iter().zip(lb.artifacts.all()) {
        assert_eq!(bytes(pa), bytes(pb), "{}", pa.display());
    }
}

#[test]
fn probe_interval_one_over_three_epochs_gives_four_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk(dir.path());
    cfg.epochs = 3;
    cfg.fisher_probe_interval = 1;
    let log = train(&cfg).unwrap();
    assert_eq!(log.reports.len(), 4);
    assert_eq!(log.reports.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    let csv = scvae::fisher::parse_csv(&fs::read_to_string(&log.artifacts.fisher).unwrap()).unwrap();
    assert_eq!(csv.len(), 4);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let full = desk(a.path());
    let full_log = train(&full).unwrap();

    let mut first = desk(b.path());
    first.epochs = 2;
    train(&first).unwrap();
    let mut rest = desk(b.path());
    rest.resume = true;
    let resumed = train(&rest).unwrap();

    assert_eq!(resumed.records.len(), 5);
    for (pa, pb) in full_log.artifacts.all().into_iter().zip(resumed.artifacts.all()) {
        assert_eq!(bytes(pa), bytes(pb), "{}", pa.display());
    }
}

#[test]
fn resume_rejects_runs_longer_than_requested() {
    let dir = tempfile::tempdir().unwrap();
    train(&desk(dir.path())).unwrap();
    let mut shorter = desk(dir.path());
    shorter.epochs = 3;
    shorter.resume = true;
    assert!(matches!(train(&shorter), Err(Error::Config(_))));
}

#[test]
fn depth_one_sweep_has_two_matching_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk(dir.path());
    cfg.epochs = 2;
    let sweep = run_depth_sweep(&cfg, &[1], &[SkipMode::None, SkipMode::EveryLayer]).unwrap();
    assert_eq!(sweep.rows.len(), 2);
    let (plain, skip) = (&sweep.rows[0].report, &sweep.rows[1].report);
    assert!((plain.overall_mean - skip.overall_mean).abs() <= 1e-12 * plain.overall_mean);
    let csv = fs::read_to_string(&sweep.csv).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("depth,skip_mode,encoder_fi,decoder_fi,overall_fi,nll,accuracy\n"));
}

#[test]
fn one_preset_one_seed_table_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk(dir.path());
    cfg.epochs = 2;
    cfg.preset_depth = 3;
    let table = run_table1(&cfg, &[Preset::VaeQpp], &[7]).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(fs::read_to_string(&table.csv).unwrap().lines().count(), 2);
    let text = fs::read_to_string(&table.text).unwrap();
    assert!(text.contains("VAE(q++)"));
    assert_eq!(table.run(Preset::VaeQpp, 7).unwrap().run_id, "vae-qpp_s7");
}

#[test]
fn config_file_drives_training() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "dataset = synth\nsynth_dim = 16\nsynth_n_per_class = 40\nhidden_width = 8\nlatent_dim = 2\n\
         epochs = 1\nprobe_size = 32\neval_samples = 2\noutput_dir = {}\nrun_id = from-file\n",
        dir.path().display()
    );
    let cfg = parse_config(&text).unwrap();
    let log = train(&cfg).unwrap();
    assert_eq!(log.run_id, "from-file");
    assert!(dir.path().join("from-file.ckpt").is_file());
}

#[test]
fn probe_batch_smaller_than_minimum_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk(dir.path());
    cfg.probe_size = 10;
    assert!(matches!(train(&cfg), Err(Error::Config(_))));
}
