// scratch probe: desk-scale separation vs training budget
use svip_core::config::*;
use svip_core::harness::*;
use svip_core::models::ModelRole;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.corpus.source = CorpusSource::Synthetic { size: 600 };
    cfg.dims.t = 12;
    cfg.dims.d_s = 8;
    cfg.dims.d_y = 8;
    cfg.dims.d_g = 16;
    cfg.dims.d_u = 12;
    cfg.dims.d_secret = 12;
    cfg.roster = vec![
        ModelEntry { name: "spec-a".into(), hidden_dim: 24, depth: 2, seed: 11, family: "toy".into(), role: ModelRole::Specified },
        ModelEntry { name: "alt-a".into(), hidden_dim: 16, depth: 2, seed: 21, family: "toy".into(), role: ModelRole::Alternative },
    ];
    cfg.labeler.epochs = 4;
    cfg.labeler.batch_size = 32;
    cfg.proxy.epochs = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(6);
    cfg.proxy.batch_size = 32;
    cfg.proxy.d_g = 16;
    cfg.proxy.lr = 1e-3;
    cfg.verification.secrets_per_prompt = 5;
    let t0 = std::time::Instant::now();
    let stack = train_stack(&cfg).unwrap();
    let report = evaluate_spec(&cfg, &stack, 0).unwrap();
    println!("epochs={} elapsed={:.1?}", cfg.proxy.epochs, t0.elapsed());
    println!("eta={:.4} val_fnr={:.3} test_fnr={:.3}", stack.specs[0].threshold.eta, stack.specs[0].val_fnr, report.fnr);
    for s in &report.scenarios {
        println!("  {:24} accept={:.3} median_d={:.4} auc={:?}", s.scenario, s.accept_rate, s.median_distance, s.auc_vs_honest);
    }
}
