//! Randomized invariants of the autodiff engine, the CRF and the network.

use onenet::crf::{CrfScoreMode, CrfScores};
use onenet::gradcheck::{gradient_check, Coverage};
use onenet::graph::{Graph, NodeId};
use onenet::heads::classification_loss;
use onenet::model::{HeadSet, LabelSpace, ModelConfig, ModelDims, Noise, OneNet};
use onenet::params::{Gradients, ParamId, ParameterStore, Partition};
use onenet::{Example, Result};
use proptest::prelude::*;
use rand::rngs::mock::StepRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

struct RandomNet {
    store: ParameterStore,
    w: ParamId,
    x: ParamId,
    y: ParamId,
    t: ParamId,
    table: ParamId,
    n: usize,
    m: usize,
    seed: u64,
    dropout: bool,
}

impl RandomNet {
    fn new(seed: u64) -> RandomNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=4);
        let mut store = ParameterStore::new();
        let mut add = |name: &str, r: usize, c: usize, rng: &mut ChaCha8Rng| {
            store
                .add_with_data(name, Partition::Shared, r, c, uniform(rng, r * c, 1.0))
                .unwrap()
        };
        let w = add("w", m, n, &mut rng);
        let x = add("x", n, 1, &mut rng);
        let y = add("y", m, 1, &mut rng);
        let t = add("t", m + 1, m, &mut rng);
        let table = add("table", 3, n, &mut rng);
        RandomNet {
            store,
            w,
            x,
            y,
            t,
            table,
            n,
            m,
            seed,
            dropout: true,
        }
    }

    /// A random expression over every exposed op, rebuilt identically from
    /// `seed` on each call.
    fn build(&self, g: &mut Graph<'_>) -> Result<NodeId> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        let wn = g.parameter(self.w);
        let tn = g.parameter(self.t);
        let mut pool = vec![g.parameter(self.x), g.parameter(self.y), g.lookup(self.table, rng.gen_range(0..3))?];
        let steps = rng.gen_range(3..=9);
        for _ in 0..steps {
            let a = pool[rng.gen_range(0..pool.len())];
            let same: Vec<NodeId> = pool.iter().copied().filter(|&p| g.dim(p) == g.dim(a)).collect();
            let b = same[rng.gen_range(0..same.len())];
            let da = g.dim(a);
            let node = match rng.gen_range(0..13) {
                0 => {
                    let v = *pool.iter().find(|&&p| g.dim(p) == self.n).expect("x is in the pool");
                    g.matvec(wn, v)?
                }
                1 => g.add(a, b)?,
                2 => g.mul(a, b)?,
                3 => g.concat(&[a, b])?,
                4 => {
                    let start = rng.gen_range(0..da);
                    let len = rng.gen_range(1..=da - start);
                    g.slice(a, start, len)?
                }
                5 => g.tanh(a)?,
                6 => g.sigmoid(a)?,
                7 => g.sum(&[a, b])?,
                8 if self.dropout => g.dropout(a, 0.7)?,
                8 => g.tanh(a)?,
                9 => g.scalar_add(a, rng.gen_range(-1.0..1.0))?,
                10 => g.negate(a)?,
                11 => {
                    let mode = if rng.gen_bool(0.5) { CrfScoreMode::Additive } else { CrfScoreMode::Multiplicative };
                    let e = *pool.iter().find(|&&p| g.dim(p) == self.m).expect("y is in the pool");
                    let first = g.crf_step(None, e, tn, mode)?;
                    g.crf_step(Some(first), e, tn, mode)?
                }
                _ => {
                    let s = g.log_sum_exp(a)?;
                    let p = g.pick(b, rng.gen_range(0..da))?;
                    g.mul(s, p)?
                }
            };
            pool.push(node);
        }
        let mut scalars = Vec::new();
        for &p in &pool[3..] {
            let d = g.dim(p);
            scalars.push(if rng.gen_bool(0.5) { g.log_sum_exp(p)? } else { g.pick(p, rng.gen_range(0..d))? });
        }
        if scalars.is_empty() {
            scalars.push(g.log_sum_exp(pool[0])?);
        }
        g.sum(&scalars)
    }
}

fn all_labelings(n: usize, l: usize) -> Vec<Vec<usize>> {
    (0..l.pow(n as u32))
        .map(|mut k| {
            (0..n)
                .map(|_| {
                    let y = k % l;
                    k /= l;
                    y
                })
                .collect()
        })
        .collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn crf_instance(seed: u64, n: usize, l: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emissions = (0..n).map(|_| uniform(&mut rng, l, 4.0)).collect();
    let transitions = uniform(&mut rng, (l + 1) * l, 4.0);
    (emissions, transitions)
}

fn tiny_model(use_chars: bool, seed: u64) -> OneNet {
    let train = vec![
        Example::new(
            vec!["wake".into(), "me".into(), "at".into(), "seven".into()],
            "alarm",
            "set_alarm",
            vec!["O".into(), "O".into(), "O".into(), "B-time".into()],
        )
        .unwrap(),
        Example::new(
            vec!["call".into(), "mona".into()],
            "communication",
            "make_call",
            vec!["O".into(), "B-contact".into()],
        )
        .unwrap(),
    ];
    let labels = LabelSpace {
        domains: vec!["alarm".into(), "communication".into()],
        intents: vec!["make_call".into(), "set_alarm".into()],
        entity_types: vec!["contact".into(), "time".into()],
    };
    let config = ModelConfig {
        dims: ModelDims {
            char_dim: 4,
            char_hidden: 5,
            word_dim: 6,
            word_hidden: 7,
        },
        use_chars,
        ..ModelConfig::default()
    };
    OneNet::for_corpus(config, &train, labels, seed).unwrap()
}

fn embed(model: &OneNet, word: &str) -> Vec<f64> {
    let mut g = Graph::new(&model.store, 0);
    let v = model.embed_word(&mut g, word).unwrap();
    g.forward().unwrap();
    g.value(v).to_vec()
}

fn encode(model: &OneNet, tokens: &[&str]) -> Vec<Vec<f64>> {
    let mut g = Graph::new(&model.store, 0);
    let nodes = model
        .build(&mut g, tokens, HeadSet::DOMAIN, Noise::NONE, &mut StepRng::new(0, 0))
        .unwrap();
    g.forward().unwrap();
    nodes.encoded.iter().map(|&h| g.value(h).to_vec()).collect()
}

/// Characters of the tiny training set, so every generated word is spelled
/// with known characters.
const LETTERS: &[char] = &['a', 'c', 'e', 'k', 'l', 'm', 'n', 'o', 's', 't'];

fn word_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(LETTERS), 1..6).prop_map(|cs| cs.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn random_graph_gradients_match_finite_differences(seed in any::<u64>()) {
        let net = RandomNet::new(seed);
        let report = gradient_check(&net.store, |g: &mut Graph<'_>| net.build(g), 1e-5, 1e-4, Coverage::All).unwrap();
        prop_assert!(report.passed(), "max relative error {:.3e} in {:?}", report.max_relative_error(), report.failures());
    }

    #[test]
    fn crf_log_partition_and_viterbi_match_enumeration(seed in any::<u64>(), n in 1usize..=5, l in 1usize..=4, multiplicative in any::<bool>()) {
        let mode = if multiplicative { CrfScoreMode::Multiplicative } else { CrfScoreMode::Additive };
        let (e, t) = crf_instance(seed, n, l);
        let crf = CrfScores::new(&e, &t, mode).unwrap();
        let paths = all_labelings(n, l);
        let scores: Vec<f64> = paths.iter().map(|p| crf.sequence_score(p).unwrap()).collect();
        let log_z = crf.log_partition();
        prop_assert!((log_z - log_sum_exp(&scores)).abs() < 1e-9);
        let mass: f64 = scores.iter().map(|s| (s - log_z).exp()).sum();
        prop_assert!((mass - 1.0).abs() < 1e-9);
        let (best, best_score) = crf.viterbi();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((best_score - max).abs() < 1e-9);
        prop_assert!((crf.sequence_score(&best).unwrap() - best_score).abs() < 1e-12);
        prop_assert!(log_z >= best_score);
    }

    #[test]
    fn crf_emission_shift_moves_log_partition_not_decoding(seed in any::<u64>(), n in 1usize..=6, l in 1usize..=4, pos in 0usize..6, c in -5.0f64..5.0) {
        let (e, t) = crf_instance(seed, n, l);
        let pos = pos % n;
        let mut shifted = e.clone();
        for v in &mut shifted[pos] {
            *v += c;
        }
        let a = CrfScores::new(&e, &t, CrfScoreMode::Additive).unwrap();
        let b = CrfScores::new(&shifted, &t, CrfScoreMode::Additive).unwrap();
        prop_assert!((b.log_partition() - a.log_partition() - c).abs() < 1e-9);
        prop_assert_eq!(a.viterbi().0, b.viterbi().0);
    }

    #[test]
    fn softmax_loss_is_permutation_invariant(seed in any::<u64>(), k in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = uniform(&mut rng, k, 10.0);
        let gold = rng.gen_range(0..k);
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let permuted: Vec<f64> = perm.iter().map(|&p| logits[p]).collect();
        let new_gold = perm.iter().position(|&p| p == gold).unwrap();
        let store = ParameterStore::new();
        let mut g = Graph::new(&store, 0);
        let a = g.constant("a", logits);
        let b = g.constant("b", permuted);
        let la = classification_loss(&mut g, a, gold).unwrap();
        let lb = classification_loss(&mut g, b, new_gold).unwrap();
        g.forward().unwrap();
        prop_assert!((g.scalar(la) - g.scalar(lb)).abs() < 1e-12);
        prop_assert!(g.scalar(la) >= 0.0);
    }

    #[test]
    fn gradients_accumulate_additively(s1 in any::<u64>(), s2 in any::<u64>()) {
        // One graph holding both expressions draws one dropout stream, so
        // masks would differ from the separate graphs.
        let net = RandomNet { dropout: false, ..RandomNet::new(s1) };
        let other = RandomNet { seed: s2, dropout: false, ..RandomNet::new(s1) };
        let grads_of = |build: &dyn Fn(&mut Graph<'_>) -> Result<NodeId>| {
            let mut g = Graph::new(&net.store, 0);
            let loss = build(&mut g).unwrap();
            g.forward().unwrap();
            g.backward(loss).unwrap();
            g.gradients().unwrap()
        };
        let ga = grads_of(&|g| net.build(g));
        let gb = grads_of(&|g| other.build(g));
        let mut acc = Gradients::zeros_like(&net.store);
        for part in [&net, &other] {
            let mut g = Graph::new(&net.store, 0);
            let loss = part.build(&mut g).unwrap();
            g.forward().unwrap();
            g.backward(loss).unwrap();
            g.accumulate_gradients(&mut acc).unwrap();
        }
        let joint = grads_of(&|g| {
            let a = net.build(g)?;
            let b = other.build(g)?;
            g.sum(&[a, b])
        });
        for id in net.store.ids() {
            for ((x, y), (s, j)) in ga.get(id).iter().zip(gb.get(id)).zip(acc.get(id).iter().zip(joint.get(id))) {
                prop_assert!((x + y - s).abs() <= 1e-12 * (1.0 + s.abs()));
                prop_assert!((s - j).abs() <= 1e-9 * (1.0 + s.abs()));
            }
        }
    }

    #[test]
    fn distinct_unseen_words_get_distinct_vectors(a in word_strategy(), b in word_strategy(), seed in 0u64..1000) {
        prop_assume!(a != b);
        let with_chars = tiny_model(true, seed);
        prop_assume!(with_chars.word_row(&a) == 0 && with_chars.word_row(&b) == 0);
        prop_assert_ne!(embed(&with_chars, &a), embed(&with_chars, &b));
        let words_only = tiny_model(false, seed);
        prop_assert_eq!(embed(&words_only, &a), embed(&words_only, &b));
    }

    #[test]
    fn encoder_directions_read_only_their_side(
        words in prop::collection::vec(word_strategy(), 2..6),
        replacement in word_strategy(),
        pos in 0usize..6,
        seed in 0u64..1000,
    ) {
        let model = tiny_model(true, seed);
        let pos = pos % words.len();
        prop_assume!(words[pos] != replacement);
        let before: Vec<&str> = words.iter().map(String::as_str).collect();
        let mut after = before.clone();
        after[pos] = &replacement;
        let h0 = encode(&model, &before);
        let h1 = encode(&model, &after);
        let half = model.config.dims.word_hidden;
        for i in 0..words.len() {
            let (f0, b0) = h0[i].split_at(half);
            let (f1, b1) = h1[i].split_at(half);
            // The forward half sees tokens up to i, the backward half tokens from i.
            if i < pos {
                prop_assert_eq!(f0, f1);
                prop_assert_ne!(b0, b1);
            } else if i > pos {
                prop_assert_ne!(f0, f1);
                prop_assert_eq!(b0, b1);
            } else {
                prop_assert_ne!(f0, f1);
                prop_assert_ne!(b0, b1);
            }
        }
    }

    #[test]
    fn forward_is_repeatable_under_a_fixed_seed(seed in any::<u64>(), graph_seed in any::<u64>()) {
        let net = RandomNet::new(seed);
        let mut g = Graph::new(&net.store, graph_seed);
        let loss = net.build(&mut g).unwrap();
        g.forward().unwrap();
        let first = g.scalar(loss);
        g.forward().unwrap();
        prop_assert_eq!(first.to_bits(), g.scalar(loss).to_bits());
    }
}
