use std::path::Path;

use dualsys::harness::{
    config_hash, effective_config, read_latents, rerun_manifest, run_experiment, ExperimentConfig, HarnessError,
    RunManifest, EXPERIMENTS,
};
use dualsys::mmdit::ConditioningMode;

/// A model and budget small enough for a few seconds per run.
fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.seed = 3;
    c.model.hidden = 8;
    c.model.heads = 1;
    c.model.depth = 1;
    c.model.time_freq_dim = 8;
    c.train.batch_size = 2;
    c.stages.pretrain_steps = 2;
    c.stages.warmup_steps = 2;
    c.stages.main_steps = 3;
    c.data.corpus_size = 16;
    c.data.eval_size = 2;
    c.sampler.steps = 2;
    c.generate.shots = 2;
    c
}

fn manifest(dir: &Path) -> RunManifest {
    RunManifest::load(&dir.join("manifest.json")).unwrap()
}

#[test]
fn plan_with_cue_file_writes_a_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let cues = dir.path().join("cues.json");
    std::fs::write(&cues, r#"{"replies": ["auto", {"text": "no json here"}]}"#).unwrap();
    let mut cfg = tiny();
    cfg.agents.cue_file = Some(cues);
    let out = run_experiment("plan", &cfg, &dir.path().join("plan")).unwrap();
    let sched: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("schedule.json")).unwrap()).unwrap();
    assert_eq!(sched["shots"].as_array().unwrap().len(), 2);
    // The planner's first reply was malformed: three exchanges in all.
    let log = std::fs::read_to_string(out.join("transcript.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let m = manifest(&out);
    assert_eq!(m.config_sha256, config_hash(&cfg));
    assert!(m.artifacts.contains(&"schedule.json".to_string()));
}

#[test]
fn ablations_differ_in_one_switch() {
    let base = tiny();
    let a = effective_config("ablate-refimage", &base).unwrap();
    let (ta, tb) = (base.to_toml(), a.to_toml());
    let diff: Vec<_> = ta.lines().zip(tb.lines()).filter(|(x, y)| x != y).collect();
    assert_eq!(diff, vec![("conditioning = \"pseudo_last_frame\"", "conditioning = \"ref_image\"")]);
    assert_eq!(a.model.conditioning, ConditioningMode::RefImage);
}

#[test]
fn unknown_names_and_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(run_experiment("bogus", &tiny(), dir.path()), Err(HarnessError::UnknownExperiment(_))));
    let e = ExperimentConfig::from_toml("[sampler]\nstep = 4\n").unwrap_err();
    assert!(e.to_string().contains("step"), "{e}");
    assert_eq!(EXPERIMENTS.len(), 11);
}

#[test]
fn training_runs_are_reproducible_from_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_experiment("ablate-nowarmup", &tiny(), &dir.path().join("a")).unwrap();
    for f in ["metrics_pretrain.csv", "metrics_main.csv", "final.ckpt", "eval.json"] {
        assert!(first.join(f).exists(), "{f}");
    }
    assert!(!first.join("metrics_warmup.csv").exists());
    let again = rerun_manifest(&first.join("manifest.json"), &dir.path().join("b")).unwrap();
    for f in ["metrics_pretrain.csv", "metrics_main.csv", "eval.json"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(first.join("metrics_main.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "step,loss,grad_norm,lr");
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn warmup_run_stops_after_stage_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment("warmup", &tiny(), dir.path()).unwrap();
    assert!(out.join("warmup.ckpt").exists());
    assert!(!out.join("metrics_main.csv").exists());
}

#[test]
fn generate_and_multiperson_write_clips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    let trained = run_experiment("main", &cfg, &dir.path().join("main")).unwrap();
    cfg.generate.checkpoint = Some(trained.join("final.ckpt"));
    cfg.generate.reflect = true;

    let g = run_experiment("generate", &cfg, &dir.path().join("gen")).unwrap();
    let clips = read_latents(&g.join("clips.bin")).unwrap();
    assert_eq!(clips.len(), 2);
    assert_eq!(clips[1].frame(0), clips[0].frame(23));
    assert!(g.join("schedules.json").exists());

    let m = run_experiment("multiperson", &cfg, &dir.path().join("mp")).unwrap();
    assert_eq!(read_latents(&m.join("clips.bin")).unwrap().len(), 1);
}

#[test]
fn reflect_experiment_keeps_completed_shots() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.generate.shots = 3;
    cfg.generate.completed_upto = 1;
    let out = run_experiment("reflect", &cfg, dir.path()).unwrap();
    let read = |f: &str| -> serde_json::Value { serde_json::from_str(&std::fs::read_to_string(out.join(f)).unwrap()).unwrap() };
    let (before, after) = (read("schedule.json"), read("schedule_reflected.json"));
    assert_eq!(before["shots"].as_array().unwrap()[..2], after["shots"].as_array().unwrap()[..2]);
}
