use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqsplit::augment::{build_training_set, SplitMethod, TargetStrategy, TrainingSet};
use seqsplit::corpus::synth::{generate, SynthConfig};
use seqsplit::corpus::{build_sequences, k_core_filter, leave_one_out, DatasetSplit, ItemId, UserSequence};
use seqsplit::eval::{evaluate, rank_of_target, Phase};
use seqsplit::models::{AnyModel, ModelKind, Scorer, SequenceModel};
use seqsplit::objective::LossKind;
use seqsplit::tensor::ParamSet;
use seqsplit::trainer::{adam_step, train_model, AdamState, TrainConfig};

fn small() -> DatasetSplit {
    let cfg = SynthConfig { num_users: 60, num_items: 40, min_len: 6, mean_extra_len: 3.0, max_len: 15, seed: 5, ..SynthConfig::default() };
    let (catalog, seqs) = build_sequences(&k_core_filter(&generate(&cfg).unwrap(), 2));
    leave_one_out(&seqs, catalog.num_items).unwrap()
}

fn quick(loss: LossKind) -> TrainConfig {
    TrainConfig { dim: 8, max_len: 10, batch_size: 16, lr: 0.01, max_epochs: 4, patience: 10, loss, ..TrainConfig::default() }
}

fn params(m: &AnyModel<f32>) -> &ParamSet<f32> {
    match m {
        AnyModel::Attn(m) => m.params(),
        AnyModel::Gru(m) => m.params(),
        _ => panic!("counting model has no parameters"),
    }
}

fn successor(v: ItemId) -> ItemId {
    v % 10 + 1
}

#[test]
fn gru_learns_a_deterministic_transition() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seqs: Vec<UserSequence> = (1..=150)
        .map(|u| {
            let mut v = rng.random_range(1..=10);
            let items = (0..8)
                .map(|_| {
                    let cur = v;
                    v = successor(v);
                    cur
                })
                .collect();
            UserSequence { user: u, items }
        })
        .collect();
    let split = leave_one_out(&seqs, 10).unwrap();
    let ts = build_training_set(&split, SplitMethod::Prefix, TargetStrategy::Single, 10).unwrap();
    let cfg = TrainConfig { dim: 16, max_len: 10, batch_size: 32, lr: 0.02, max_epochs: 60, patience: 5, ..TrainConfig::default() };
    let (model, report) = train_model::<f32>(ModelKind::Gru, &ts, &split, &cfg).unwrap();
    assert_eq!(report.best_valid, 1.0);
    for start in 1..=10 {
        for len in 1..=6 {
            let ctx: Vec<ItemId> = std::iter::successors(Some(start), |&v| Some(successor(v))).take(len).collect();
            let scores = model.score(&ctx).unwrap().scores;
            assert_eq!(rank_of_target(&scores, successor(*ctx.last().unwrap())), 1, "context {ctx:?}");
        }
    }
}

#[test]
fn training_replays_bit_for_bit() {
    let split = small();
    let ts = build_training_set(&split, SplitMethod::Prefix, TargetStrategy::Single, 10).unwrap();
    for kind in [ModelKind::Attn, ModelKind::Gru] {
        for loss in [LossKind::Ce, LossKind::Bce { negatives: 2 }] {
            let cfg = quick(loss);
            let (a, ra) = train_model::<f32>(kind, &ts, &split, &cfg).unwrap();
            let (b, rb) = train_model::<f32>(kind, &ts, &split, &cfg).unwrap();
            assert_eq!(params(&a), params(&b));
            assert_eq!(ra.train_losses, rb.train_losses);
            let other = TrainConfig { seed: 1, ..cfg };
            let (c, _) = train_model::<f32>(kind, &ts, &split, &other).unwrap();
            assert_ne!(params(&a), params(&c));
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let split = small();
    let ts = build_training_set(&split, SplitMethod::Original, TargetStrategy::Multi, 10).unwrap();
    let cfg = quick(LossKind::Bce { negatives: 1 });
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train_model::<f32>(ModelKind::Attn, &ts, &split, &cfg).unwrap())
    };
    let (a, _) = run(1);
    let (b, _) = run(3);
    assert_eq!(params(&a), params(&b));
}

fn subset(ts: &TrainingSet, n: usize) -> TrainingSet {
    let mut out = ts.clone();
    out.subsequences.truncate(n);
    out.examples.truncate(n);
    out
}

#[test]
fn loss_decreases_on_a_small_subset() {
    let split = small();
    let ts = subset(&build_training_set(&split, SplitMethod::Prefix, TargetStrategy::Single, 10).unwrap(), 50);
    for kind in [ModelKind::Attn, ModelKind::Gru] {
        for loss in [LossKind::Ce, LossKind::Bce { negatives: 1 }] {
            let cfg = TrainConfig { max_epochs: 5, lr: 0.02, ..quick(loss) };
            let (_, report) = train_model::<f32>(kind, &ts, &split, &cfg).unwrap();
            let l = &report.train_losses;
            assert_eq!(l.len(), 5);
            assert!(l[4] < l[0], "{kind} {loss}: {l:?}");
        }
    }
}

#[test]
fn reported_best_matches_reevaluation() {
    let split = small();
    let ts = build_training_set(&split, SplitMethod::Prefix, TargetStrategy::Single, 10).unwrap();
    for kind in [ModelKind::Pop, ModelKind::Markov, ModelKind::Attn, ModelKind::Gru] {
        let cfg = quick(LossKind::Ce);
        let (model, report) = train_model::<f32>(kind, &ts, &split, &cfg).unwrap();
        let again = evaluate(&model, &split, Phase::Valid, &cfg.eval_config()).unwrap();
        assert_eq!(again.ndcg10, report.best_valid);
        assert!(report.best_epoch <= report.epochs);
        if kind.is_neural() {
            assert_eq!(report.valid_history[report.best_epoch - 1], report.best_valid);
        } else {
            assert_eq!((report.epochs, report.best_epoch), (0, 0));
        }
    }
}

#[test]
fn zero_gradient_never_moves_parameters() {
    let split = small();
    let ts = build_training_set(&split, SplitMethod::Original, TargetStrategy::Single, 10).unwrap();
    let (model, _) = train_model::<f64>(ModelKind::Gru, &ts, &split, &TrainConfig { max_epochs: 1, ..quick(LossKind::Ce) }).unwrap();
    let AnyModel::Gru(mut m) = model else { unreachable!() };
    let before = m.params().clone();
    let zeros = before.zeros_like();
    let mut state = AdamState::new(&before);
    for _ in 0..50 {
        adam_step(m.params_mut(), &zeros, &mut state, &TrainConfig::default()).unwrap();
    }
    assert_eq!(m.params(), &before);
}
