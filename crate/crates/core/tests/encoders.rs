use langreach::encoders::{
    encode_instruction, evaluate, init_params, policy_forward, AgentInput, LangEncoderConfig,
    NetConfig, StateFeatures,
};
use langreach::env::{tokenize, PAD};
use langreach::numerics::{Graph, ParamStore};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> NetConfig {
    let mut cfg = NetConfig::standard(2, 8, 4, vec![-1.5, -0.5, 0.0], vec![1.5, 0.5, 2.0], 2);
    cfg.conv_channels = [3, 4];
    cfg
}

fn features(cfg: &NetConfig, n: usize, rng: &mut ChaCha8Rng) -> Vec<StateFeatures> {
    let texts = ["Touch the blue cube.", "Touch the red cube."];
    (0..n)
        .map(|i| StateFeatures {
            tokens: tokenize(texts[i % 2]),
            image: (0..cfg.image_channels() * cfg.image_height * cfg.image_width)
                .map(|_| rng.random::<f64>())
                .collect(),
            proprio_tactile: (0..cfg.pt_input()).map(|_| rng.random_range(-2.0..2.0)).collect(),
        })
        .collect()
}

fn agent_input(cfg: &NetConfig, n: usize, seed: u64) -> AgentInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feats = features(cfg, n, &mut rng);
    let rows: Vec<&StateFeatures> = feats.iter().collect();
    AgentInput::from_features(cfg, &rows).unwrap()
}

fn lang_params(seed: u64) -> ParamStore {
    init_params(&small_cfg(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn pooled(params: &ParamStore, tokens: &[usize]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut g = Graph::new(params);
    let enc = encode_instruction(&mut g, &LangEncoderConfig::default(), tokens).unwrap();
    let per_token = g.value(enc.tokens);
    let rows = (0..tokens.len()).map(|r| per_token.row(r).to_vec()).collect();
    (g.value(enc.embedding).data().to_vec(), rows)
}

#[test]
fn pooled_embedding_is_the_mean_over_non_pad_tokens() {
    let params = lang_params(1);
    let tokens = tokenize("Touch the green cube.");
    let (g_t, rows) = pooled(&params, &tokens);
    let mut oracle = vec![0.0; 50];
    let mut count = 0.0;
    for (t, row) in tokens.iter().zip(&rows) {
        if *t == PAD {
            continue;
        }
        count += 1.0;
        for (o, v) in oracle.iter_mut().zip(row) {
            *o += v;
        }
    }
    for (a, b) in g_t.iter().zip(&oracle) {
        assert!((a - b / count).abs() < 1e-14, "{a} vs {}", b / count);
    }
}

#[test]
fn pad_positions_do_not_leak_into_the_embedding() {
    // Swapping the two pad slots and even changing what a pad embeds to
    // leaves G_t untouched.
    let mut params = lang_params(2);
    let tokens = tokenize("Touch the red cube.");
    let (before, _) = pooled(&params, &tokens);
    let mut swapped = tokens.clone();
    swapped.swap(6, 7);
    assert_eq!(pooled(&params, &swapped).0, before);
    let table = params.get_mut("lang.embed").unwrap();
    for v in &mut table.data_mut()[PAD * 50..(PAD + 1) * 50] {
        *v += 3.0;
    }
    assert_eq!(pooled(&params, &tokens).0, before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_rows_always_sum_to_one(ids in prop::collection::vec(0usize..10, 1..=8), seed in 0u64..4) {
        let params = lang_params(seed);
        let mut g = Graph::new(&params);
        let enc = encode_instruction(&mut g, &LangEncoderConfig::default(), &ids).unwrap();
        for maps in &enc.attention {
            for m in maps {
                let (r, _) = m.dims2("attention").unwrap();
                for i in 0..r {
                    let s: f64 = m.row(i).iter().sum();
                    // an all-pad sequence has no key to attend to
                    prop_assert!((s - 1.0).abs() < 1e-12 || (s == 0.0 && ids.iter().all(|t| *t == PAD)));
                }
            }
        }
    }

    #[test]
    fn mean_action_stays_within_limits(seed in any::<u64>(), gain in 1.0f64..50.0) {
        let cfg = small_cfg();
        let mut params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for (_, t) in params.iter_mut() {
            for v in t.data_mut() {
                *v *= gain;
            }
        }
        let out = evaluate(&params, &cfg, &agent_input(&cfg, 3, seed)).unwrap();
        for o in out {
            for ((a, lo), hi) in o.mean_action.iter().zip(&cfg.limits_min).zip(&cfg.limits_max) {
                prop_assert!(lo <= a && a <= hi, "{a} outside [{lo}, {hi}]");
            }
            prop_assert!(o.value.is_finite());
        }
    }
}

#[test]
fn critic_value_responds_to_its_parameters() {
    let cfg = small_cfg();
    let mut params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let input = agent_input(&cfg, 2, 4);
    let total = |p: &ParamStore| evaluate(p, &cfg, &input).unwrap().iter().map(|o| o.value).sum::<f64>();
    let grads = {
        let mut g = Graph::new(&params);
        let vars = policy_forward(&mut g, &cfg, &input).unwrap();
        let s = g.sum(vars.value);
        g.backward(s).unwrap()
    };
    let h = 1e-5;
    for name in ["critic.fc1.w", "critic.fc4.b", "vision.conv1.w", "lang.l0.wq"] {
        let analytic = grads.get(name).unwrap().data()[0];
        let orig = params.get(name).unwrap().data()[0];
        params.get_mut(name).unwrap().data_mut()[0] = orig + h;
        let plus = total(&params);
        params.get_mut(name).unwrap().data_mut()[0] = orig - h;
        let minus = total(&params);
        params.get_mut(name).unwrap().data_mut()[0] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        assert!(numeric.abs() > 0.0, "{name}: value does not move");
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        assert!(rel < 1e-4, "{name}: {analytic} vs {numeric}");
    }
}

#[test]
fn value_is_one_scalar_per_row_and_action_has_dof_entries() {
    let cfg = small_cfg();
    let params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let out = evaluate(&params, &cfg, &agent_input(&cfg, 5, 1)).unwrap();
    assert_eq!(out.len(), 5);
    assert!(out.iter().all(|o| o.mean_action.len() == 3));
}
