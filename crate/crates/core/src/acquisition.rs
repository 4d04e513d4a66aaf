//! Context-related knowledge selection: attribute pairs of entities mentioned in the
//! text or recognised in the images, and relation tuples mined by bounded walks over
//! the knowledge graph.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{AttributeValuePair, Entity, KnowledgeBase, KnowledgeGraph};
use crate::text::tokenize;

/// Concatenated context tokens plus the feature vectors of context images.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DialogContext {
    pub text_tokens: Vec<String>,
    #[serde(default)]
    pub image_features: Vec<Vec<f64>>,
}

impl DialogContext {
    pub fn from_utterances<S: AsRef<str>>(utterances: &[S], image_features: Vec<Vec<f64>>) -> Self {
        let text_tokens = utterances.iter().flat_map(|u| tokenize(u.as_ref())).collect();
        Self { text_tokens, image_features }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Textual,
    Visual,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub source_entity: String,
    pub pair: AttributeValuePair,
    pub provenance: Provenance,
}

impl KnowledgeItem {
    fn key(&self) -> (&str, &str, &str) {
        (&self.source_entity, &self.pair.attribute_type, &self.pair.value)
    }
}

/// Ordered attribute knowledge. Within one provenance block items are sorted by
/// `(source entity, attribute type, value)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeKnowledge {
    pub items: Vec<KnowledgeItem>,
}

impl AttributeKnowledge {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Distinct source entities in first-appearance order.
    pub fn sources(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.items
            .iter()
            .filter(|i| seen.insert(i.source_entity.as_str()))
            .map(|i| i.source_entity.clone())
            .collect()
    }

    /// `type : value ;` runs, one per item, tokenized.
    pub fn linearize(&self) -> Vec<String> {
        let mut out = Vec::new();
        for item in &self.items {
            out.extend(tokenize(&item.pair.attribute_type));
            out.push(":".into());
            out.extend(tokenize(&item.pair.value));
            out.push(";".into());
        }
        out
    }

    fn from_entities<'a>(entities: impl IntoIterator<Item = &'a Entity>, provenance: Provenance) -> Self {
        let mut keyed = BTreeSet::new();
        for e in entities {
            for p in &e.attributes {
                keyed.insert((e.name.clone(), p.attribute_type.clone(), p.value.clone()));
            }
        }
        let items = keyed
            .into_iter()
            .map(|(source_entity, t, v)| KnowledgeItem {
                source_entity,
                pair: AttributeValuePair::new(t, v),
                provenance,
            })
            .collect();
        Self { items }
    }
}

/// An alternating `[node, label, node, ..., node]` walk.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationTuple {
    pub entries: Vec<String>,
}

impl RelationTuple {
    pub fn hops(&self) -> usize {
        self.entries.len() / 2
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().step_by(2).map(String::as_str)
    }

    /// Ordering used when the number of tuples has to be capped: fewer hops first.
    pub fn priority_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.hops().cmp(&other.hops()).then_with(|| self.entries.cmp(&other.entries))
    }
}

impl fmt::Display for RelationTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.entries.join(", "))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    /// Visual similarity threshold; an entity is selected when its similarity is strictly greater.
    pub epsilon: f64,
    pub max_hops: usize,
    /// Optional cap on the number of tuples per context, keeping the highest priority ones.
    #[serde(default)]
    pub max_tuples: Option<usize>,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self { epsilon: 0.8, max_hops: 2, max_tuples: None }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("entity {0:?} has no images")]
    NoImages(String),
    #[error("cosine similarity undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("feature dimension {found} does not match {expected}")]
    DimMismatch { found: usize, expected: usize },
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Entities whose tokenized name occurs as a contiguous run of the context tokens
/// (case-insensitive), in name order.
pub fn mentioned_entities<'a>(ctx: &DialogContext, kb: &'a KnowledgeBase) -> Vec<&'a Entity> {
    let lowered: Vec<String> = ctx.text_tokens.iter().map(|t| t.to_lowercase()).collect();
    kb.entities().filter(|e| contains_run(&lowered, &tokenize(&e.name))).collect()
}

pub fn acquire_text_attributes(ctx: &DialogContext, kb: &KnowledgeBase) -> AttributeKnowledge {
    AttributeKnowledge::from_entities(mentioned_entities(ctx, kb), Provenance::Textual)
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimMismatch { found: a.len(), expected: b.len() });
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Maximum cosine similarity between `feature` and any image of the entity.
pub fn entity_similarity(feature: &[f64], entity: &Entity) -> Result<f64, SimilarityError> {
    if entity.image_features.is_empty() {
        return Err(SimilarityError::NoImages(entity.name.clone()));
    }
    let mut best = f64::NEG_INFINITY;
    for img in &entity.image_features {
        best = best.max(cosine(feature, img)?);
    }
    Ok(best)
}

/// Entities whose similarity to at least one context image exceeds `epsilon`, in name order.
pub fn visual_entities<'a>(ctx: &DialogContext, kb: &'a KnowledgeBase, cfg: &AcquisitionConfig) -> Vec<&'a Entity> {
    let mut selected = Vec::new();
    for entity in kb.entities() {
        if entity.image_features.is_empty() {
            continue;
        }
        let hit = ctx.image_features.iter().any(|f| match entity_similarity(f, entity) {
            Ok(s) => s > cfg.epsilon,
            Err(e) => {
                log::warn!("skipping image comparison with {:?}: {e}", entity.name);
                false
            }
        });
        if hit {
            selected.push(entity);
        }
    }
    selected
}

pub fn acquire_visual_attributes(
    ctx: &DialogContext,
    kb: &KnowledgeBase,
    cfg: &AcquisitionConfig,
) -> AttributeKnowledge {
    AttributeKnowledge::from_entities(visual_entities(ctx, kb, cfg), Provenance::Visual)
}

/// Textual items first, then visual, dropping repeated `(entity, type, value)` keys.
pub fn merge_attribute_knowledge(text_k: &AttributeKnowledge, visual_k: &AttributeKnowledge) -> AttributeKnowledge {
    let mut seen = HashSet::new();
    let items = text_k
        .items
        .iter()
        .chain(&visual_k.items)
        .filter(|i| seen.insert(i.key()))
        .cloned()
        .collect();
    AttributeKnowledge { items }
}

/// Every maximal simple path of 1..=`max_hops` edges from each seed. A path stops
/// when the hop budget is spent or its last node has no edge to an unvisited node.
/// The result is deduplicated and ordered by [`RelationTuple::priority_cmp`], then
/// truncated to `max_tuples` when set.
pub fn walk_relations<S: AsRef<str>>(graph: &KnowledgeGraph, seeds: &[S], cfg: &AcquisitionConfig) -> Vec<RelationTuple> {
    let mut found = BTreeSet::new();
    for seed in seeds {
        let seed = seed.as_ref().trim();
        if !graph.contains_node(seed) {
            log::warn!("walk seed {seed:?} is not a graph node; skipped");
            continue;
        }
        let mut entries = vec![seed.to_string()];
        let mut visited = HashSet::from([seed.to_string()]);
        walk_from(graph, seed, cfg.max_hops, &mut entries, &mut visited, &mut found);
    }
    let mut tuples: Vec<RelationTuple> = found.into_iter().map(|entries| RelationTuple { entries }).collect();
    tuples.sort_by(RelationTuple::priority_cmp);
    if let Some(cap) = cfg.max_tuples {
        tuples.truncate(cap);
    }
    tuples
}

fn walk_from(
    graph: &KnowledgeGraph,
    node: &str,
    budget: usize,
    entries: &mut Vec<String>,
    visited: &mut HashSet<String>,
    found: &mut BTreeSet<Vec<String>>,
) {
    let hops = entries.len() / 2;
    if hops == budget {
        found.insert(entries.clone());
        return;
    }
    let mut extended = false;
    for (label, tail) in graph.out_edges(node) {
        if visited.contains(tail) {
            continue;
        }
        extended = true;
        entries.push(label.clone());
        entries.push(tail.clone());
        visited.insert(tail.clone());
        walk_from(graph, tail, budget, entries, visited, found);
        visited.remove(tail);
        entries.truncate(entries.len() - 2);
    }
    if !extended && hops > 0 {
        found.insert(entries.clone());
    }
}

/// Whitespace-split words of every entry, in order.
pub fn linearize_tuple(t: &RelationTuple) -> Vec<String> {
    t.entries.iter().flat_map(|e| e.split_whitespace().map(str::to_string)).collect()
}

/// Everything acquired for one context.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcquiredKnowledge {
    pub attributes: AttributeKnowledge,
    pub tuples: Vec<RelationTuple>,
}

/// Runs both attribute routes and walks from every textual or visual entity.
pub fn acquire(
    ctx: &DialogContext,
    kb: &KnowledgeBase,
    graph: &KnowledgeGraph,
    cfg: &AcquisitionConfig,
) -> AcquiredKnowledge {
    let text_k = acquire_text_attributes(ctx, kb);
    let visual_k = acquire_visual_attributes(ctx, kb, cfg);
    let attributes = merge_attribute_knowledge(&text_k, &visual_k);
    let mut seeds = text_k.sources();
    for s in visual_k.sources() {
        if !seeds.contains(&s) {
            seeds.push(s);
        }
    }
    let tuples = walk_relations(graph, &seeds, cfg);
    AcquiredKnowledge { attributes, tuples }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{build_graph, Triplet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(t: &str, v: &str) -> AttributeValuePair {
        AttributeValuePair::new(t, v)
    }

    fn sample_kb() -> KnowledgeBase {
        KnowledgeBase::from_entities(vec![
            Entity::new("Wisma Atria", vec![pair("location", "Orchard Road"), pair("domain", "mall"), pair("wifi", "yes")])
                .with_images(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]),
            Entity::new("Inaniwa Yosuke", vec![pair("near", "Wisma Atria"), pair("domain", "food"), pair("wifi", "yes")])
                .with_images(vec![vec![0.0, 0.0, 1.0]]),
            Entity::new("Esplanade Park", vec![pair("domain", "sightseeing")]),
        ])
        .unwrap()
    }

    fn ctx(text: &str) -> DialogContext {
        DialogContext::from_utterances(&[text], vec![])
    }

    #[test]
    fn text_mentions_select_pairs() {
        let kb = sample_kb();
        let k = acquire_text_attributes(&ctx("How do I get to wisma ATRIA?"), &kb);
        assert_eq!(k.len(), 3);
        assert!(k.items.iter().all(|i| i.source_entity == "Wisma Atria" && i.provenance == Provenance::Textual));
        let types: Vec<_> = k.items.iter().map(|i| i.pair.attribute_type.as_str()).collect();
        assert_eq!(types, vec!["domain", "location", "wifi"]);

        assert!(acquire_text_attributes(&ctx("hello there"), &kb).is_empty());
        // a partial name is not a mention
        assert!(acquire_text_attributes(&ctx("wisma is closed"), &kb).is_empty());
    }

    #[test]
    fn text_mentions_match_substring_oracle() {
        let kb = sample_kb();
        let c = ctx("is inaniwa yosuke near wisma atria or esplanade park ?");
        let got = acquire_text_attributes(&c, &kb);
        // oracle: padded substring search over the joined token string
        let joined = format!(" {} ", c.text_tokens.join(" "));
        let mut expected = BTreeSet::new();
        for e in kb.entities() {
            if joined.contains(&format!(" {} ", e.name.to_lowercase())) {
                for p in &e.attributes {
                    expected.insert((e.name.clone(), p.attribute_type.clone(), p.value.clone()));
                }
            }
        }
        let got_set: BTreeSet<_> = got
            .items
            .iter()
            .map(|i| (i.source_entity.clone(), i.pair.attribute_type.clone(), i.pair.value.clone()))
            .collect();
        assert_eq!(got_set, expected);
        assert_eq!(got.len(), 7);
        assert_eq!(got.sources(), vec!["Esplanade Park", "Inaniwa Yosuke", "Wisma Atria"]);
    }

    #[test]
    fn similarity_cases() {
        let kb = sample_kb();
        let wisma = kb.get("Wisma Atria").unwrap();
        assert!((entity_similarity(&[1.0, 0.0, 0.0], wisma).unwrap() - 1.0).abs() < 1e-15);
        let inaniwa = kb.get("Inaniwa Yosuke").unwrap();
        assert_eq!(entity_similarity(&[1.0, 0.0, 0.0], inaniwa).unwrap(), 0.0);

        // cosines 0.2 and 0.9 against the two images
        let e = Entity::new("E", vec![]).with_images(vec![
            vec![0.2, (1.0f64 - 0.04).sqrt()],
            vec![0.9, (1.0f64 - 0.81).sqrt()],
        ]);
        assert!((entity_similarity(&[1.0, 0.0], &e).unwrap() - 0.9).abs() < 1e-12);

        let bare = kb.get("Esplanade Park").unwrap();
        assert!(matches!(entity_similarity(&[1.0, 0.0, 0.0], bare), Err(SimilarityError::NoImages(_))));
        assert_eq!(entity_similarity(&[0.0, 0.0, 0.0], wisma), Err(SimilarityError::ZeroNorm));
    }

    #[test]
    fn visual_selection_and_threshold_boundaries() {
        let kb = sample_kb();
        let cfg = AcquisitionConfig { epsilon: 0.5, ..Default::default() };
        let c = DialogContext { text_tokens: vec![], image_features: vec![vec![0.0, 1.0, 0.0]] };
        let k = acquire_visual_attributes(&c, &kb, &cfg);
        assert_eq!(k.len(), 3);
        assert!(k.items.iter().all(|i| i.source_entity == "Wisma Atria" && i.provenance == Provenance::Visual));

        assert!(acquire_visual_attributes(&DialogContext::default(), &kb, &cfg).is_empty());

        let mixed = DialogContext { text_tokens: vec![], image_features: vec![vec![1.0, 1.0, 1.0]] };
        let all = AcquisitionConfig { epsilon: -1.0, ..Default::default() };
        assert_eq!(visual_entities(&mixed, &kb, &all).len(), 2);
        let none = AcquisitionConfig { epsilon: 1.0, ..Default::default() };
        let exact = DialogContext { text_tokens: vec![], image_features: vec![vec![0.0, 0.0, 1.0]] };
        assert!(visual_entities(&exact, &kb, &none).is_empty());
        // threshold exactly equal to the similarity is excluded
        let cos = 1.0 / 3f64.sqrt();
        let at = AcquisitionConfig { epsilon: cos, ..Default::default() };
        let sims: Vec<f64> = kb
            .entities()
            .filter(|e| !e.image_features.is_empty())
            .map(|e| entity_similarity(&mixed.image_features[0], e).unwrap())
            .collect();
        assert!(sims.iter().all(|s| *s == cos));
        assert!(visual_entities(&mixed, &kb, &at).is_empty());
    }

    #[test]
    fn visual_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dim = 6;
        let entities: Vec<Entity> = (0..8)
            .map(|i| {
                let n_img = rng.gen_range(0..3);
                let imgs = (0..n_img).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
                Entity::new(format!("ent {i}"), vec![pair("id", &format!("v{i}")), pair("kind", "x")]).with_images(imgs)
            })
            .collect();
        let kb = KnowledgeBase::from_entities(entities).unwrap();
        let images: Vec<Vec<f64>> = (0..5).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let c = DialogContext { text_tokens: vec![], image_features: images.clone() };
        let cfg = AcquisitionConfig { epsilon: 0.7, ..Default::default() };
        let got: BTreeSet<_> = acquire_visual_attributes(&c, &kb, &cfg)
            .items
            .into_iter()
            .map(|i| (i.source_entity, i.pair.value))
            .collect();

        let mut expected = BTreeSet::new();
        for img in &images {
            for e in kb.entities() {
                let mut best = f64::NEG_INFINITY;
                for ei in &e.image_features {
                    let dot: f64 = img.iter().zip(ei).map(|(a, b)| a * b).sum();
                    let n1: f64 = img.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let n2: f64 = ei.iter().map(|a| a * a).sum::<f64>().sqrt();
                    best = best.max(dot / (n1 * n2));
                }
                if best > 0.7 {
                    for p in &e.attributes {
                        expected.insert((e.name.clone(), p.value.clone()));
                    }
                }
            }
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn merge_orders_and_dedups() {
        let kb = sample_kb();
        let t = acquire_text_attributes(&ctx("wisma atria"), &kb);
        let c = DialogContext { text_tokens: vec![], image_features: vec![vec![0.0, 0.0, 1.0]] };
        let v = acquire_visual_attributes(&c, &kb, &AcquisitionConfig::default());
        let m = merge_attribute_knowledge(&t, &v);
        assert_eq!(m.len(), 6);
        assert!(m.items[..3].iter().all(|i| i.provenance == Provenance::Textual));
        assert_eq!(merge_attribute_knowledge(&t, &t).len(), 3);

        // same entity found both ways keeps the textual copy
        let both = acquire_visual_attributes(
            &DialogContext { text_tokens: vec![], image_features: vec![vec![1.0, 0.0, 0.0]] },
            &kb,
            &AcquisitionConfig::default(),
        );
        let m = merge_attribute_knowledge(&t, &both);
        assert_eq!(m, t);
    }

    #[test]
    fn merge_partial_overlap_is_set_union() {
        let mk = |names: &[(&str, &str)], p| AttributeKnowledge {
            items: names
                .iter()
                .map(|(e, v)| KnowledgeItem { source_entity: e.to_string(), pair: pair("t", v), provenance: p })
                .collect(),
        };
        let a = mk(&[("a", "1"), ("a", "2"), ("b", "1")], Provenance::Textual);
        let b = mk(&[("a", "2"), ("c", "9"), ("b", "1"), ("b", "3")], Provenance::Visual);
        let m = merge_attribute_knowledge(&a, &b);
        let union: BTreeSet<_> = a.items.iter().chain(&b.items).map(|i| i.key()).collect();
        assert_eq!(m.len(), union.len());
        assert_eq!(&m.items[..3], &a.items[..]);
    }

    #[test]
    fn linearized_knowledge_uses_type_value_runs() {
        let kb = sample_kb();
        let k = acquire_text_attributes(&ctx("esplanade park"), &kb);
        assert_eq!(k.linearize(), vec!["domain", ":", "sightseeing", ";"]);
    }

    #[test]
    fn motivating_two_hop_chain() {
        let g = KnowledgeGraph::from_triplets([
            Triplet { head: "InaniwaYosuke".into(), label: "near".into(), tail: "WismaAtria".into() },
            Triplet { head: "WismaAtria".into(), label: "domain".into(), tail: "mall".into() },
        ]);
        let cfg = AcquisitionConfig { max_hops: 2, ..Default::default() };
        let got = walk_relations(&g, &["InaniwaYosuke"], &cfg);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].entries, vec!["InaniwaYosuke", "near", "WismaAtria", "domain", "mall"]);
        assert!(walk_relations(&g, &["mall"], &cfg).is_empty());
        assert!(walk_relations(&g, &["nowhere"], &cfg).is_empty());
    }

    #[test]
    fn walk_over_kb_graph_and_cap() {
        let kb = sample_kb();
        let g = build_graph(&kb);
        let cfg = AcquisitionConfig::default();
        let tuples = walk_relations(&g, &["Inaniwa Yosuke"], &cfg);
        let shown: Vec<String> = tuples.iter().map(|t| t.to_string()).collect();
        assert_eq!(
            shown,
            vec![
                "[Inaniwa Yosuke, domain, food]",
                "[Inaniwa Yosuke, wifi, yes]",
                "[Inaniwa Yosuke, near, Wisma Atria, domain, mall]",
                "[Inaniwa Yosuke, near, Wisma Atria, location, Orchard Road]",
                "[Inaniwa Yosuke, near, Wisma Atria, wifi, yes]",
            ]
        );
        let capped = walk_relations(&g, &["Inaniwa Yosuke"], &AcquisitionConfig { max_tuples: Some(2), ..cfg });
        assert_eq!(capped, tuples[..2].to_vec());
    }

    #[test]
    fn cycles_do_not_repeat_nodes() {
        let g = KnowledgeGraph::from_triplets([
            Triplet { head: "a".into(), label: "r".into(), tail: "b".into() },
            Triplet { head: "b".into(), label: "r".into(), tail: "a".into() },
        ]);
        let got = walk_relations(&g, &["a"], &AcquisitionConfig { max_hops: 5, ..Default::default() });
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].entries, vec!["a", "r", "b"]);
    }

    #[test]
    fn linearize_cases() {
        let t = RelationTuple { entries: vec!["A".into(), "near".into(), "B".into()] };
        assert_eq!(linearize_tuple(&t), vec!["A", "near", "B"]);
        let t = RelationTuple { entries: vec!["Inaniwa Yosuke".into(), "near".into(), "Wisma Atria".into()] };
        assert_eq!(linearize_tuple(&t), vec!["Inaniwa", "Yosuke", "near", "Wisma", "Atria"]);
        let t = RelationTuple {
            entries: vec![
                "Inaniwa Yosuke".into(),
                "near".into(),
                "Wisma Atria".into(),
                "credit cards".into(),
                "yes".into(),
            ],
        };
        let recount: usize = t.entries.iter().map(|e| e.split(' ').filter(|w| !w.is_empty()).count()).sum();
        assert_eq!(linearize_tuple(&t).len(), recount);
        assert_eq!(recount, 8);
    }

    #[test]
    fn acquire_seeds_from_both_routes() {
        let kb = sample_kb();
        let g = build_graph(&kb);
        let c = DialogContext {
            text_tokens: tokenize("esplanade park please"),
            image_features: vec![vec![0.0, 0.0, 1.0]],
        };
        let got = acquire(&c, &kb, &g, &AcquisitionConfig::default());
        assert_eq!(got.attributes.sources(), vec!["Esplanade Park", "Inaniwa Yosuke"]);
        assert!(got.tuples.iter().any(|t| t.entries[0] == "Esplanade Park"));
        assert!(got.tuples.iter().any(|t| t.entries[0] == "Inaniwa Yosuke"));
    }
}
