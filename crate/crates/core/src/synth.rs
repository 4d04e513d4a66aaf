//! Seeded synthetic knowledge bases and dialog corpora.
//!
//! Entities come in chains: a landmark whose only attribute is `near`, naming a venue
//! with a domain, location and price. Attribute questions ask about a venue by name
//! (or by photo). Relation questions ask what kind of place is near a landmark; the
//! answer is the venue's domain, which only a two-hop walk from the landmark reaches.
//! Open questions have fixed answers.
//!
//! Names are two words from small pools, so every name word is shared by many
//! entities and only the combination is unique.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusRecord;
use crate::kb::{AttributeValuePair, Entity, KbError, KnowledgeBase};

pub const DOMAINS: [&str; 6] = ["mall", "hotel", "restaurant", "museum", "park", "cafe"];
pub const LOCATIONS: [&str; 8] = ["orchard", "bugis", "marina", "tanjong", "novena", "changi", "sentosa", "clementi"];
pub const PRICES: [&str; 3] = ["cheap", "moderate", "expensive"];

const FIRST_WORDS: [&str; 16] = [
    "Golden", "Royal", "Jade", "Silver", "Crimson", "Lucky", "Grand", "Amber",
    "Coral", "Ivory", "Velvet", "Emerald", "Maple", "Cedar", "Willow", "Harbor",
];
const SECOND_WORDS: [&str; 16] = [
    "Lotus", "Garden", "Pavilion", "Palm", "Orchid", "Tower", "Square", "Lantern",
    "Terrace", "Court", "Bay", "Arcade", "Grove", "Plaza", "Dragon", "Crane",
];
const OPEN: [(&str, &str); 3] = [
    ("Hello there.", "hi , how can i help you ?"),
    ("Thanks a lot.", "you are welcome ."),
    ("That is all, goodbye.", "goodbye , have a nice day ."),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Attribute,
    Relation,
    Open,
}

/// A generated pair plus what it asks about.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPair {
    pub record: CorpusRecord,
    pub family: Family,
    /// Entity named in the question, if any.
    pub subject: Option<String>,
    /// Attribute the answer copies, e.g. `domain`.
    pub attribute: Option<String>,
    /// Copied attribute value.
    pub answer: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_entities: usize,
    pub n_pairs: usize,
    /// Dimension of synthetic image features; 0 disables images.
    pub image_dim: usize,
    /// Relative frequencies of the attribute, relation and open families.
    pub mix: [f64; 3],
    /// Noise amplitude added to context image features.
    pub image_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { seed: 0, n_entities: 16, n_pairs: 32, image_dim: 0, mix: [0.4, 0.4, 0.2], image_noise: 0.1 }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub kb: KnowledgeBase,
    pub pairs: Vec<SyntheticPair>,
}

impl SyntheticCorpus {
    pub fn records(&self) -> Vec<CorpusRecord> {
        self.pairs.iter().map(|p| p.record.clone()).collect()
    }

    pub fn dialog_pairs(&self) -> Vec<crate::pipeline::DialogPair> {
        self.pairs.iter().map(|p| p.record.to_pair()).collect()
    }
}

/// Subject/hub pair.
#[derive(Clone, Debug)]
struct Chain {
    subject: usize,
    hub: usize,
}

struct World {
    entities: Vec<Entity>,
    chains: Vec<Chain>,
    venues: Vec<usize>,
}

fn names(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let capacity = FIRST_WORDS.len() * SECOND_WORDS.len();
    assert!(n <= capacity, "at most {capacity} synthetic entities");
    let mut all: Vec<String> = FIRST_WORDS
        .iter()
        .flat_map(|a| SECOND_WORDS.iter().map(move |b| format!("{a} {b}")))
        .collect();
    all.shuffle(rng);
    all.truncate(n);
    all
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn build_world(rng: &mut ChaCha8Rng, n_entities: usize, image_dim: usize) -> World {
    let names = names(rng, n_entities);
    // entity 2i is a landmark near venue 2i+1; an odd last entity is a lone venue
    let chains: Vec<Chain> = (0..n_entities / 2).map(|i| Chain { subject: 2 * i, hub: 2 * i + 1 }).collect();
    let mut entities = Vec::with_capacity(n_entities);
    for (i, name) in names.iter().enumerate() {
        let attrs = if i % 2 == 0 && i + 1 < n_entities {
            vec![AttributeValuePair::new("near", names[i + 1].clone())]
        } else {
            vec![
                AttributeValuePair::new("domain", *DOMAINS.choose(rng).unwrap()),
                AttributeValuePair::new("location", *LOCATIONS.choose(rng).unwrap()),
                AttributeValuePair::new("price", *PRICES.choose(rng).unwrap()),
            ]
        };
        let mut e = Entity::new(name.clone(), attrs);
        if image_dim > 0 {
            e = e.with_images(vec![unit_vector(rng, image_dim)]);
        }
        entities.push(e);
    }
    let venues = (0..n_entities).filter(|i| i % 2 == 1 || i + 1 == n_entities).collect();
    World { entities, chains, venues }
}

fn attr<'a>(e: &'a Entity, t: &str) -> &'a str {
    e.attributes.iter().find(|p| p.attribute_type == t).map(|p| p.value.as_str()).unwrap_or("")
}

fn relation_pair(world: &World, chain: &Chain) -> SyntheticPair {
    let subject = &world.entities[chain.subject];
    let domain = attr(&world.entities[chain.hub], "domain");
    SyntheticPair {
        record: CorpusRecord {
            context_utterances: vec![format!("What kind of place is near {}?", subject.name)],
            context_image_features: vec![],
            response: format!("the place nearby is a {domain} ."),
        },
        family: Family::Relation,
        subject: Some(subject.name.clone()),
        attribute: Some("domain".into()),
        answer: Some(domain.into()),
    }
}

fn attribute_pair(rng: &mut ChaCha8Rng, world: &World, entity: usize, noise: f64) -> SyntheticPair {
    let e = &world.entities[entity];
    let kind = rng.gen_range(0..3);
    let visual = !e.image_features.is_empty() && rng.gen_bool(0.3);
    let (what, attribute, tail) = match kind {
        0 => ("What kind of place is", "domain", format!("a {}", attr(e, "domain"))),
        1 => ("Where is", "location", format!("in {}", attr(e, "location"))),
        _ => ("How pricey is", "price", attr(e, "price").to_string()),
    };
    let (question, response, images) = if visual {
        let img: Vec<f64> = e.image_features[0].iter().map(|v| v + rng.gen_range(-noise..=noise)).collect();
        (format!("{what} this place?"), format!("it is {tail} ."), vec![img])
    } else {
        (format!("{what} {}?", e.name), format!("{} is {tail} .", e.name), vec![])
    };
    SyntheticPair {
        record: CorpusRecord { context_utterances: vec![question], context_image_features: images, response },
        family: Family::Attribute,
        subject: Some(e.name.clone()),
        attribute: Some(attribute.into()),
        answer: Some(attr(e, attribute).into()),
    }
}

fn open_pair(rng: &mut ChaCha8Rng) -> SyntheticPair {
    let (q, a) = OPEN.choose(rng).unwrap();
    SyntheticPair {
        record: CorpusRecord { context_utterances: vec![q.to_string()], context_image_features: vec![], response: a.to_string() },
        family: Family::Open,
        subject: None,
        attribute: None,
        answer: None,
    }
}

fn finish(world: World) -> Result<KnowledgeBase, KbError> {
    KnowledgeBase::from_entities(world.entities)
}

/// Mixed-family corpus. Needs at least four entities.
pub fn make_synthetic_corpus(cfg: &SynthConfig) -> Result<SyntheticCorpus, KbError> {
    if cfg.n_entities < 4 {
        return Err(KbError::Invalid { name: String::new(), position: 0, reason: "at least four entities are needed".into() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = build_world(&mut rng, cfg.n_entities, cfg.image_dim);
    let total: f64 = cfg.mix.iter().sum();
    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    for _ in 0..cfg.n_pairs {
        let u = rng.gen_range(0.0..total.max(f64::MIN_POSITIVE));
        let pair = if u < cfg.mix[0] {
            let e = world.venues[rng.gen_range(0..world.venues.len())];
            attribute_pair(&mut rng, &world, e, cfg.image_noise)
        } else if u < cfg.mix[0] + cfg.mix[1] {
            relation_pair(&world, &world.chains[rng.gen_range(0..world.chains.len())])
        } else {
            open_pair(&mut rng)
        };
        pairs.push(pair);
    }
    Ok(SyntheticCorpus { kb: finish(world)?, pairs })
}

/// Relation-family train and held-out sets over one knowledge base, one pair per
/// chain. Held-out chains share neither landmark nor venue with training chains.
pub fn relation_split(seed: u64, n_train: usize, n_test: usize) -> Result<(KnowledgeBase, Vec<SyntheticPair>, Vec<SyntheticPair>), KbError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = build_world(&mut rng, 2 * (n_train + n_test), 0);
    let make = |chains: &[Chain], n: usize, rng: &mut ChaCha8Rng| -> Vec<SyntheticPair> {
        let mut out: Vec<SyntheticPair> = chains[..n].iter().map(|c| relation_pair(&world, c)).collect();
        out.shuffle(rng);
        out
    };
    let train = make(&world.chains[..n_train], n_train, &mut rng);
    let test = make(&world.chains[n_train..], n_test, &mut rng);
    Ok((finish(world)?, train, test))
}
