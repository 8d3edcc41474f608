#![allow(dead_code)]

use pricure::dp::PrivacyParams;
use pricure::model::{
    generate_fixture, make_blobs, nearest_mean_readout, ModelParameters, NetworkSpec, SyntheticDataset,
};
use pricure::protocol::{
    client_share_input, dealer_provision, owner_share_model, Hello, PartialResult, PartyId, Role, SealedResult,
    SessionConfig,
};
use pricure::ring::{FixedPointCodec, RingModulus, RingTensor};
use pricure::sharing::WorkerId;
use pricure::transport::Message;
use rand::Rng;

/// One nearest-mean readout per owner, each fitted on its own shard of
/// `data`. Samples come interleaved by class, so whole class groups are
/// dealt round-robin.
pub fn blob_owners(spec: &NetworkSpec, data: &SyntheticDataset, m: usize) -> Vec<ModelParameters> {
    (0..m)
        .map(|k| {
            let shard = data.samples.iter().enumerate().filter(|(i, _)| (i / data.classes) % m == k).map(|(_, s)| s);
            let means = data.class_means(shard);
            nearest_mean_readout(spec, &means).expect("readout fits spec")
        })
        .collect()
}

pub fn blob_setup(spec: &NetworkSpec, m: usize, train_per_class: usize, seed: u64) -> (SyntheticDataset, Vec<ModelParameters>) {
    let data = make_blobs(train_per_class, spec.output_dim, spec.input_dim, seed).expect("blobs");
    let models = blob_owners(spec, &data, m);
    (data, models)
}

fn random_tensor(rng: &mut impl Rng) -> RingTensor {
    let rank = rng.gen_range(1..=3);
    let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(0..5)).collect();
    RingTensor::random(RingModulus::mersenne61(), shape, rng)
}

fn random_worker(rng: &mut impl Rng) -> WorkerId {
    if rng.gen() {
        WorkerId::A
    } else {
        WorkerId::B
    }
}

/// A random message of any type with plausible contents.
pub fn random_message(rng: &mut impl Rng) -> Message {
    let codec = FixedPointCodec::default();
    let spec = NetworkSpec::new(rng.gen_range(1..5), vec![rng.gen_range(1..4)], rng.gen_range(1..4));
    match rng.gen_range(0..12) {
        0 => Message::Heartbeat,
        1 => Message::Hello(Hello {
            party: PartyId::new(match rng.gen_range(0..6) {
                0 => Role::Owner(rng.gen_range(1..100)),
                1 => Role::WorkerA,
                2 => Role::WorkerB,
                3 => Role::Dealer,
                4 => Role::Aggregator,
                _ => Role::Client,
            }),
            config_hash: rng.gen(),
        }),
        2 => {
            let params = generate_fixture(&spec, rng.gen());
            let (a, b) = owner_share_model(rng.gen_range(1..9), &params, codec, rng).unwrap();
            Message::ModelShare(if rng.gen() { a } else { b })
        }
        3 => {
            let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (a, _) = client_share_input(rng.gen(), &x, &spec, codec, rng).unwrap();
            Message::InputShare(a)
        }
        4 => {
            let cfg = SessionConfig::new(spec, rng.gen_range(1..3), PrivacyParams::no_noise());
            let (a, b) = dealer_provision(&cfg, 1, rng.gen()).remove(0);
            Message::TripleInventory(if rng.gen() { a } else { b })
        }
        5 => Message::Open((0..rng.gen_range(0..4)).map(|_| random_tensor(rng)).collect()),
        6 => Message::SignQuery(random_tensor(rng)),
        7 => Message::SignReply(random_tensor(rng)),
        8 => Message::PartialResult(PartialResult {
            round: rng.gen(),
            owner: rng.gen(),
            holder: random_worker(rng),
            scores: random_tensor(rng),
        }),
        9 => Message::ClientKey(rng.gen()),
        10 => Message::SealedResult(SealedResult {
            round: rng.gen(),
            nonce: rng.gen(),
            sender: rng.gen(),
            ciphertext: (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect(),
        }),
        _ => Message::Abort {
            code: rng.gen(),
            reason: (0..rng.gen_range(0..20)).map(|_| rng.gen_range('a'..='z')).collect(),
        },
    }
}
