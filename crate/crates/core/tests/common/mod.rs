//! Helpers shared by the integration tests: finite differences, a brute-force
//! clustering oracle and the synthetic-family experiment setup.

#![allow(dead_code)]

use langvec::corpus::{
    build_vocabulary, split_train_test, SplitSpec, TokenSequence, VerseCorpus, Vocabulary, BOS, EOS,
};
use langvec::evaluation::ModelShape;
use langvec::langspace::{DendrogramTree, Linkage, Metric};
use langvec::model::{Model, ModelConfig};
use langvec::synthetic::{FamilyConfig, SyntheticFamily};
use langvec::training::batch_loss_and_grad;
use langvec::training::{train, TrainConfig, TrainOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|a − n| / max(|a|, |n|, 1e-6)`: relative error, with an absolute floor so
/// gradients that are zero up to rounding do not divide by noise.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `f` at `x[i]`.
pub fn central_diff(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// Largest relative error over every parameter of a small full model.
pub fn full_model_max_rel_err(tied: bool) -> f64 {
    const H: f64 = 1e-5;
    let cfg = ModelConfig {
        vocab_size: 10,
        char_embed_dim: 4,
        hidden_dim: 8,
        lang_embed_dim: 2,
        num_languages: 3,
        pre_softmax_dim: 8,
        tie_language_embeddings: tied,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut model: Model<f64> = Model::init(cfg, &mut rng).unwrap();
    let batch: Vec<TokenSequence> = (0..4)
        .map(|k| {
            let mut ids = vec![BOS];
            ids.extend((0..5 + k).map(|_| rng.random_range(3..10)));
            ids.push(EOS);
            TokenSequence::new(k % 3, ids).unwrap()
        })
        .collect();
    batch_loss_and_grad(&mut model, &batch).unwrap();
    let grads: Vec<Vec<f64>> = model
        .params()
        .ids()
        .map(|id| model.params().grad(id).data().to_vec())
        .collect();

    let mean_nll = |m: &Model<f64>| -> f64 {
        let (mut total, mut chars) = (0.0, 0);
        for s in &batch {
            let lang = m.language_vector(s.language).unwrap();
            let (nll, n) = m.sequence_nll(s, &lang).unwrap();
            total += nll;
            chars += n;
        }
        total / chars as f64
    };
    let ids: Vec<_> = model.params().ids().collect();
    let mut worst = 0.0f64;
    for (k, &id) in ids.iter().enumerate() {
        for i in 0..model.params().value(id).len() {
            let orig = model.params().value(id).data()[i];
            model.params_mut().value_mut(id).data_mut()[i] = orig + H;
            let up = mean_nll(&model);
            model.params_mut().value_mut(id).data_mut()[i] = orig - H;
            let down = mean_nll(&model);
            model.params_mut().value_mut(id).data_mut()[i] = orig;
            worst = worst.max(rel_err(grads[k][i], (up - down) / (2.0 * H)));
        }
    }
    worst
}

/// Agglomerative clustering recomputing every cluster distance from the
/// member pairs at every step.
pub fn brute_force_cluster(items: &[(String, Vec<f64>)], metric: Metric, linkage: Linkage) -> DendrogramTree {
    let n = items.len();
    let d = |i: usize, j: usize| metric.distance(&items[i].1, &items[j].1);
    let mut clusters: Vec<(Vec<usize>, DendrogramTree)> =
        (0..n).map(|i| (vec![i], DendrogramTree::leaf(&items[i].0))).collect();
    let min_code = |members: &[usize]| members.iter().map(|&m| items[m].0.clone()).min().unwrap();
    while clusters.len() > 1 {
        let mut best: Option<(f64, String, String, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let pairs: Vec<f64> = clusters[a]
                    .0
                    .iter()
                    .flat_map(|&i| clusters[b].0.iter().map(move |&j| (i, j)))
                    .map(|(i, j)| d(i, j))
                    .collect();
                let dist = match linkage {
                    Linkage::Average => pairs.iter().sum::<f64>() / pairs.len() as f64,
                    Linkage::Complete => pairs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    Linkage::Single => pairs.iter().cloned().fold(f64::INFINITY, f64::min),
                };
                let (ka, kb) = (min_code(&clusters[a].0), min_code(&clusters[b].0));
                let (lo, hi) = if ka < kb { (ka, kb) } else { (kb, ka) };
                let better = match &best {
                    None => true,
                    Some(bst) => (dist, &lo, &hi) < (bst.0, &bst.1, &bst.2),
                };
                if better {
                    best = Some((dist, lo, hi, a, b));
                }
            }
        }
        let (dist, _, _, a, b) = best.unwrap();
        let (mb, tb) = clusters.remove(b);
        let (ma, ta) = clusters.remove(a);
        let members = [ma, mb].concat();
        clusters.push((members, DendrogramTree::join(ta, tb, dist)));
    }
    clusters.pop().unwrap().1
}

/// Same topology, leaf names and child order, heights within `tol`.
pub fn trees_match(a: &DendrogramTree, b: &DendrogramTree, tol: f64) -> bool {
    match (a, b) {
        (DendrogramTree::Leaf { name: x }, DendrogramTree::Leaf { name: y }) => x == y,
        (
            DendrogramTree::Node {
                children: ca,
                height: ha,
            },
            DendrogramTree::Node {
                children: cb,
                height: hb,
            },
        ) => (ha - hb).abs() <= tol && ca.len() == cb.len() && ca.iter().zip(cb).all(|(x, y)| trees_match(x, y, tol)),
        _ => false,
    }
}

/// Family used by the phylogeny, interpolation, estimation and capacity checks.
pub fn family() -> SyntheticFamily {
    SyntheticFamily::generate(&FamilyConfig {
        alphabet_size: 16,
        root_scale: 1.0,
        edge_sigmas: vec![0.05, 0.05, 0.05],
        boosts_per_edge: vec![6, 4, 3],
        boost: 3.0,
        seed: 0,
    })
    .unwrap()
}

pub const VERSES: usize = 200;
pub const VERSE_LEN: std::ops::RangeInclusive<usize> = 30..=60;
pub const HOLDOUT: usize = 16;
pub const STEPS: u64 = 1000;
pub const CAPACITY_STEPS: u64 = 400;

pub struct Experiment {
    pub family: SyntheticFamily,
    pub corpus: VerseCorpus,
    pub split: SplitSpec,
    pub vocab: Vocabulary,
}

pub fn experiment() -> Experiment {
    let family = family();
    let corpus = family.corpus(VERSES, VERSE_LEN, 7);
    let split = split_train_test(&corpus, HOLDOUT).unwrap();
    let vocab = build_vocabulary(&corpus, 100).unwrap();
    Experiment {
        family,
        corpus,
        split,
        vocab,
    }
}

pub fn shape() -> ModelShape {
    ModelShape {
        char_embed_dim: 8,
        hidden_dim: 32,
        lang_embed_dim: 8,
        pre_softmax_dim: 32,
        tie_language_embeddings: false,
    }
}

pub fn train_config(seed: u64, steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 16,
        eval_every: steps / 4,
        seed,
        learning_rate: 3e-3,
        holdout: HOLDOUT,
        ..Default::default()
    }
}

pub fn train_family(exp: &Experiment, seed: u64, steps: u64) -> TrainOutcome {
    let cfg = shape().config(exp.vocab.len(), exp.corpus.num_languages());
    train(&exp.corpus, &exp.split, &exp.vocab, &cfg, &train_config(seed, steps)).unwrap()
}
