use std::collections::BTreeMap;
use std::path::PathBuf;

use causelab::envworld::{make_setup, EnvSpec, ObsMask, WorldConstants};
use causelab::hierarchy::{evaluate_tree, train_tree, CausalTree, DiscoveryConfig};
use causelab::inference::{infer_batch, infer_embedding};
use serde::{Deserialize, Serialize};

fn mass_tree(seed: u64) -> (Vec<EnvSpec>, CausalTree) {
    let envs = make_setup("Mass", seed).unwrap();
    let cfg = DiscoveryConfig {
        mask: ObsMask::Z,
        seed,
        ..DiscoveryConfig::default()
    };
    let tree = train_tree(&envs, 1, &cfg, Some("Mass")).unwrap();
    (envs, tree)
}

fn block(env_id: u32, mass: f64) -> EnvSpec {
    EnvSpec::new(env_id, mass, 0.5, 0.075, WorldConstants::default()).unwrap()
}

#[test]
fn inference_reproduces_training_paths() {
    let envs = make_setup("SizeMass", 3).unwrap();
    let cfg = DiscoveryConfig {
        seed: 3,
        ..DiscoveryConfig::default()
    };
    let tree = train_tree(&envs, 2, &cfg, Some("SizeMass")).unwrap();
    let paths = tree.training_paths();
    for emb in infer_batch(&tree, &envs, tree.mask).unwrap() {
        assert_eq!(emb.bits, paths[&emb.env_id], "env {}", emb.env_id);
        assert_eq!(emb.valid_prefix_len, emb.bits.len());
    }
}

#[test]
fn heavy_unseen_blocks_share_the_heavy_bit() {
    let (envs, tree) = mass_tree(0);
    assert_eq!(tree.experiment_count(), 1);
    let heaviest = envs.iter().max_by(|a, b| a.mass.total_cmp(&b.mass)).unwrap();
    let lightest = envs.iter().min_by(|a, b| a.mass.total_cmp(&b.mass)).unwrap();
    let heavy_bit = infer_embedding(&tree, heaviest).unwrap().bits;
    assert_ne!(heavy_bit, infer_embedding(&tree, lightest).unwrap().bits);
    for (id, mass) in [(100, 0.7), (101, 0.75)] {
        assert_eq!(infer_embedding(&tree, &block(id, mass)).unwrap().bits, heavy_bit, "mass {mass}");
    }
}

#[test]
fn mass_sweep_flips_once() {
    let (_, tree) = mass_tree(0);
    let sweep: Vec<EnvSpec> = (1..=20).map(|i| block(200 + i, 0.05 * i as f64)).collect();
    let bits: Vec<u8> = infer_batch(&tree, &sweep, ObsMask::Z)
        .unwrap()
        .iter()
        .map(|e| e.bits[0])
        .collect();
    let crossings = bits.windows(2).filter(|w| w[0] != w[1]).count();
    assert_eq!(crossings, 1, "{bits:?}");
}

#[test]
fn deeper_levels_refine_the_partition() {
    let envs = make_setup("FrictionSizeMass", 1).unwrap();
    let cfg = DiscoveryConfig {
        seed: 1,
        ..DiscoveryConfig::default()
    };
    let tree = train_tree(&envs, 3, &cfg, None).unwrap();
    for node in tree.nodes() {
        if node.children.is_empty() {
            continue;
        }
        let mut union: Vec<u32> = node.children.iter().flat_map(|c| c.env_ids.iter().copied()).collect();
        union.sort_unstable();
        let mut own = node.env_ids.clone();
        own.sort_unstable();
        assert_eq!(union, own, "node {:?}", node.id);
        assert!(node.children.iter().all(|c| c.depth == node.depth + 1));
    }
    let report = evaluate_tree(&tree, &envs).unwrap();
    assert!(report.leaf_occupancy.values().sum::<usize>() >= envs.len());
    assert!(report.full_cells <= 8);
}

#[test]
fn tree_json_roundtrip() {
    let (_, tree) = mass_tree(2);
    let back = CausalTree::from_json(&tree.to_json().unwrap()).unwrap();
    assert_eq!(back.root.env_ids, tree.root.env_ids);
    assert_eq!(back.training_paths(), tree.training_paths());
    let (a, b) = (back.root.experiment.unwrap(), tree.root.experiment.unwrap());
    assert_eq!(a.plan, b.plan);
    assert_eq!(a.reward, b.reward);
    assert_eq!(a.model, b.model);
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct GoldenNode {
    reward: f64,
    plan: Vec<f64>,
    labels: Vec<u8>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Golden {
    nodes: BTreeMap<String, GoldenNode>,
    paths: BTreeMap<u32, String>,
}

fn golden_of(tree: &CausalTree) -> Golden {
    let nodes = tree
        .nodes()
        .into_iter()
        .filter_map(|n| {
            n.experiment.as_ref().map(|e| {
                (
                    n.id.clone(),
                    GoldenNode {
                        reward: e.reward,
                        plan: e.plan.to_flat().to_vec(),
                        labels: e.labels.clone(),
                    },
                )
            })
        })
        .collect();
    let paths = tree
        .training_paths()
        .into_iter()
        .map(|(id, bits)| (id, bits.iter().map(|b| char::from(b'0' + b)).collect()))
        .collect();
    Golden { nodes, paths }
}

/// Set `CAUSELAB_BLESS=1` to rewrite the fixture after an intended change.
#[test]
fn size_mass_golden_tree() {
    let envs = make_setup("SizeMass", 0).unwrap();
    let tree = train_tree(&envs, 2, &DiscoveryConfig::default(), Some("SizeMass")).unwrap();
    let got = golden_of(&tree);
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/size_mass_k2_seed0.json");
    if std::env::var_os("CAUSELAB_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
    }
    let text = std::fs::read_to_string(&path).expect("fixture missing; run with CAUSELAB_BLESS=1");
    let want: Golden = serde_json::from_str(&text).unwrap();
    assert_eq!(got, want);
}
