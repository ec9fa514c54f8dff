use std::fs;

use onenet::checkpoint::{self, MODEL_INDEX};
use onenet::eval::ModelSet;
use onenet::model::{LabelSpace, ModelConfig, ModelDims, OneNet};
use onenet::Example;

fn example(tokens: &[&str], domain: &str, intent: &str, slots: &[&str]) -> Example {
    Example::new(
        tokens.iter().map(|t| t.to_string()).collect(),
        domain,
        intent,
        slots.iter().map(|t| t.to_string()).collect(),
    )
    .unwrap()
}

fn model(seed: u64) -> OneNet {
    let train = vec![
        example(&["wake", "me", "at", "seven"], "alarm", "set_alarm", &["O", "O", "O", "B-time"]),
        example(&["call", "Mona", "now"], "communication", "make_call", &["O", "B-contact", "O"]),
    ];
    let labels = LabelSpace {
        domains: vec!["alarm".into(), "communication".into()],
        intents: vec!["make_call".into(), "set_alarm".into()],
        entity_types: vec!["contact".into(), "time".into()],
    };
    let config = ModelConfig {
        dims: ModelDims {
            char_dim: 3,
            char_hidden: 4,
            word_dim: 5,
            word_hidden: 6,
        },
        ..ModelConfig::default()
    };
    OneNet::for_corpus(config, &train, labels, seed).unwrap()
}

#[test]
fn saved_model_predicts_identically_after_loading() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.ckpt");
    let m = model(3);
    let digest = checkpoint::save(&m, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    for tokens in [vec!["wake", "mona", "at", "nine"], vec!["zzz"], vec!["Call", "me"]] {
        let a = serde_json::to_string(&m.predict(&tokens).unwrap()).unwrap();
        let b = serde_json::to_string(&back.predict(&tokens).unwrap()).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(checkpoint::to_bytes(&back), fs::read(&path).unwrap());
    let manifest = fs::read_to_string(checkpoint::manifest_path(&path)).unwrap();
    assert!(manifest.contains(&digest));
    assert_eq!(manifest.lines().filter(|l| l.starts_with("tensor ")).count(), m.store.iter().count());
}

#[test]
fn every_flipped_byte_is_rejected() {
    let bytes = checkpoint::to_bytes(&model(1));
    for i in (0..bytes.len()).step_by(97) {
        let mut bad = bytes.clone();
        bad[i] ^= 0x10;
        assert!(checkpoint::from_bytes(&bad).is_err(), "flip at {i} accepted");
    }
    for cut in [0, 8, 40, bytes.len() - 1] {
        assert!(checkpoint::from_bytes(&bytes[..cut]).is_err());
    }
}

#[test]
fn model_sets_reload_and_detect_swapped_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut set = ModelSet::default();
    set.insert_role("joint", model(1)).unwrap();
    set.insert_role("domain", model(2)).unwrap();
    let index = checkpoint::save_set(&set, tmp.path()).unwrap();
    assert_eq!(index.models.len(), 2);
    let back = checkpoint::load_set(tmp.path()).unwrap();
    let roles: Vec<String> = back.roles().into_iter().map(|(r, _)| r).collect();
    assert_eq!(roles, ["joint", "domain"]);

    fs::copy(tmp.path().join("domain.ckpt"), tmp.path().join("joint.ckpt")).unwrap();
    let err = checkpoint::load_set(tmp.path()).unwrap_err().to_string();
    assert!(err.contains("joint.ckpt"), "{err}");

    fs::write(tmp.path().join(MODEL_INDEX), "{").unwrap();
    assert!(checkpoint::load_set(tmp.path()).is_err());
    assert!(set.insert_role("tagger", model(1)).is_err());
}
