use atss::atssnet::{AtssModel, EncoderConfig};
use atss::embstore::{Corpus, Label};
use atss::metrics::{accuracy, ScoredSample, THRESHOLD};
use atss::optim::{prepare, train_step, AdamState, Example};
use atss::simlat::build_triplet;
use atss::synthgen::{generate, SynthConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Relabels every record by whether its visual density clears the median,
/// so the target is a deterministic function of the input.
fn threshold_labelled() -> Corpus {
    let corpus = generate(&SynthConfig {
        n_real: 100,
        n_fake: 100,
        seed: 31,
        ..SynthConfig::default()
    })
    .unwrap();
    let density: Vec<f64> = corpus
        .records()
        .iter()
        .map(|r| build_triplet(r).unwrap().visual.off_diagonal_mean().unwrap())
        .collect();
    let mut sorted = density.clone();
    sorted.sort_by(f64::total_cmp);
    let cut = (sorted[99] + sorted[100]) / 2.0;
    let records = corpus
        .into_records()
        .into_iter()
        .zip(density)
        .map(|(mut r, d)| {
            r.label = if d > cut { Label::Fake } else { Label::Real };
            r
        })
        .collect();
    Corpus::new(records).unwrap()
}

fn train_accuracy(model: &AtssModel, examples: &[Example]) -> f64 {
    let scored: Vec<ScoredSample> = examples
        .iter()
        .map(|(t, y)| ScoredSample::new(model.forward(t).unwrap().p_fake, *y == 1))
        .collect();
    accuracy(&scored, THRESHOLD).unwrap().0
}

#[test]
fn separable_by_construction_is_fit_within_fifty_epochs() {
    let corpus = threshold_labelled();
    assert_eq!(corpus.class_counts(), (100, 100));
    let examples = prepare(&corpus).unwrap();
    let mut model = AtssModel::init(EncoderConfig::default(), 8, 31).unwrap();
    let mut adam = AdamState::new(1e-4, model.parameters());
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::new();
    for _ in 0..50 {
        order.shuffle(&mut rng);
        for chunk in order.chunks(32) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            train_step(&mut model, &mut adam, &batch).unwrap();
        }
        let acc = train_accuracy(&model, &examples);
        history.push(acc);
        if acc == 1.0 {
            break;
        }
    }
    assert_eq!(history.last(), Some(&1.0), "accuracy by epoch: {history:?}");
}
