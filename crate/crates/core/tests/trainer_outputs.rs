use std::fs;

use bedwarden_core::agents::{AgentConfig, Variant};
use bedwarden_core::hospital::HospitalConfig;
use bedwarden_core::trainer::{
    evaluate, read_metrics, read_trace, run_baseline, train, BaselinePolicy, TrainConfig,
    TrainError, CHECKPOINT_DIR, FULL_TRACE_FILE, METRICS_FILE, TRACE_FILE,
};

fn env() -> HospitalConfig {
    HospitalConfig {
        sim_duration: 12.0,
        arrivals_per_day: 15.0,
        los: 4.0,
        ..Default::default()
    }
}

fn config(out: Option<std::path::PathBuf>) -> TrainConfig {
    TrainConfig {
        episodes: 3,
        env: env(),
        agent: AgentConfig {
            hidden: vec![8],
            batch_size: 8,
            ..AgentConfig::for_variant(Variant::D3qn)
        },
        env_seed_base: 40,
        agent_seed: 2,
        out_dir: out,
        full_trace: true,
        zero_timing: true,
        ..Default::default()
    }
}

#[test]
fn writes_documented_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&config(Some(dir.path().to_path_buf()))).unwrap();
    let metrics_text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let trace_text = fs::read_to_string(dir.path().join(TRACE_FILE)).unwrap();
    assert_eq!(
        metrics_text.lines().next().unwrap(),
        "episode,epsilon,mean_reward,total_reward,final_beds,final_patients,seconds"
    );
    assert_eq!(
        trace_text.lines().next().unwrap(),
        "day,weekday,beds,patients,spare_beds,pending_bed_change,action_delta,reward"
    );
    let metrics = read_metrics(dir.path().join(METRICS_FILE)).unwrap();
    let trace = read_trace(dir.path().join(TRACE_FILE)).unwrap();
    assert_eq!(metrics.len(), 3);
    assert_eq!(trace.len(), 12);
    assert_eq!(metrics, out.metrics);
    assert_eq!(trace, out.trace);
    assert!(metrics.iter().all(|m| m.mean_reward <= 0.0));
    let full = fs::read_to_string(dir.path().join(FULL_TRACE_FILE)).unwrap();
    assert_eq!(full.lines().count(), 1 + 3 * 12);
    assert!(dir.path().join(CHECKPOINT_DIR).join("meta.json").exists());
}

#[test]
fn training_is_deterministic() {
    let a = train(&config(None)).unwrap();
    let b = train(&config(None)).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn evaluation_is_repeatable_and_read_only() {
    let dir = tempfile::tempdir().unwrap();
    train(&config(Some(dir.path().to_path_buf()))).unwrap();
    let ck = dir.path().join(CHECKPOINT_DIR);
    let snapshot = |name: &str| fs::read(ck.join(name)).unwrap();
    let before = (
        snapshot("meta.json"),
        snapshot("policy_0.json"),
        snapshot("target_0.json"),
    );
    let (m1, t1) = evaluate(&ck, &env(), 2, 9).unwrap();
    let (m2, t2) = evaluate(&ck, &env(), 2, 9).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(t1, t2);
    assert!(m1.iter().all(|m| m.epsilon == 0.0));
    assert_eq!(
        before,
        (
            snapshot("meta.json"),
            snapshot("policy_0.json"),
            snapshot("target_0.json")
        )
    );

    let one_hot = HospitalConfig {
        weekday_one_hot: true,
        ..env()
    };
    assert!(matches!(
        evaluate(&ck, &one_hot, 1, 0),
        Err(TrainError::ObservationMismatch { .. })
    ));
}

#[test]
fn random_legal_never_errors() {
    let (metrics, _) = run_baseline(
        BaselinePolicy::RandomLegal,
        &HospitalConfig::default(),
        28,
        1,
        true,
    )
    .unwrap();
    assert_eq!(metrics.len() * 365, 10_220);
}

#[test]
fn zero_episodes_rejected() {
    let cfg = TrainConfig {
        episodes: 0,
        ..config(None)
    };
    assert!(matches!(train(&cfg), Err(TrainError::NoEpisodes)));
}
