//! Entity forests: one tree per entity type under an implicit BOS root.
//!
//! Each tree node is a fragment; the path from a type root to a node is the
//! fragment list of a candidate entity. Entities sharing a type and a fragment
//! prefix share the corresponding path. A node carries an end marker when an
//! entity terminates there, so `T[(0,0)]` and `T[(0,0),(2,2)]` can coexist.

use std::collections::BTreeMap;

use serde::Serialize;

use super::types::{Entity, Fragment, MAX_FRAGMENTS};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ForestNode {
    pub is_end: bool,
    pub children: BTreeMap<Fragment, ForestNode>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntityForest {
    trees: BTreeMap<String, BTreeMap<Fragment, ForestNode>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ForestError {
    #[error("entity {0} has more than {MAX_FRAGMENTS} fragments")]
    TooDeep(String),
    #[error("fragment {child} does not start after its parent {parent}")]
    OutOfOrder { parent: Fragment, child: Fragment },
}

impl EntityForest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn trees(&self) -> &BTreeMap<String, BTreeMap<Fragment, ForestNode>> {
        &self.trees
    }

    /// Adds a root-to-node path and marks its last node as an entity end.
    pub fn insert_path(&mut self, label: &str, path: &[Fragment]) -> Result<(), ForestError> {
        assert!(!path.is_empty(), "empty forest path");
        if path.len() > MAX_FRAGMENTS {
            return Err(ForestError::TooDeep(format!("{label}{path:?}")));
        }
        for w in path.windows(2) {
            if w[1].start <= w[0].end {
                return Err(ForestError::OutOfOrder {
                    parent: w[0],
                    child: w[1],
                });
            }
        }
        fn insert(level: &mut BTreeMap<Fragment, ForestNode>, path: &[Fragment]) {
            let node = level.entry(path[0]).or_default();
            match path {
                [_] => node.is_end = true,
                [_, rest @ ..] => insert(&mut node.children, rest),
                [] => unreachable!(),
            }
        }
        insert(self.trees.entry(label.to_string()).or_default(), path);
        Ok(())
    }

    /// Visits every node with its type label and root-to-node path.
    pub fn for_each_node(&self, mut f: impl FnMut(&str, &[Fragment], &ForestNode)) {
        fn walk(
            label: &str,
            level: &BTreeMap<Fragment, ForestNode>,
            path: &mut Vec<Fragment>,
            f: &mut dyn FnMut(&str, &[Fragment], &ForestNode),
        ) {
            for (frag, node) in level {
                path.push(*frag);
                f(label, path, node);
                walk(label, &node.children, path, f);
                path.pop();
            }
        }
        let mut path = Vec::with_capacity(MAX_FRAGMENTS);
        for (label, roots) in &self.trees {
            walk(label, roots, &mut path, &mut f);
        }
    }

    pub fn max_depth(&self) -> usize {
        let mut depth = 0;
        self.for_each_node(|_, path, _| depth = depth.max(path.len()));
        depth
    }

    pub fn node_count(&self) -> usize {
        let mut count = 0;
        self.for_each_node(|_, _, _| count += 1);
        count
    }

    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct JsonNode {
            fragment: Fragment,
            end: bool,
            children: Vec<JsonNode>,
        }
        fn convert(level: &BTreeMap<Fragment, ForestNode>) -> Vec<JsonNode> {
            level
                .iter()
                .map(|(f, n)| JsonNode {
                    fragment: *f,
                    end: n.is_end,
                    children: convert(&n.children),
                })
                .collect()
        }
        let trees: Vec<serde_json::Value> = self
            .trees
            .iter()
            .map(|(label, roots)| serde_json::json!({"type": label, "nodes": convert(roots)}))
            .collect();
        serde_json::json!({ "root": "BOS", "trees": trees })
    }
}

/// Builds the prefix-merged forest of a set of entities.
pub fn build_forest<'a, I>(entities: I) -> Result<EntityForest, ForestError>
where
    I: IntoIterator<Item = &'a Entity>,
{
    let mut forest = EntityForest::new();
    for e in entities {
        if !e.fits_forest() {
            return Err(ForestError::TooDeep(e.to_string()));
        }
        forest.insert_path(&e.label, e.fragments())?;
    }
    Ok(forest)
}

/// One entity per end-marked node, in canonical order.
pub fn flatten_forest(forest: &EntityForest) -> Vec<Entity> {
    let mut out = Vec::new();
    forest.for_each_node(|label, path, node| {
        if node.is_end {
            out.push(Entity::new(label, path.to_vec()).expect("forest paths are valid entities"));
        }
    });
    out.sort();
    out
}
