use super::{FilterError, Fingerprint, SubFilterId};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Node {
    Leaf(SubFilterId),
    Internal([usize; 2]),
}

/// The split state of an LDCF. Leaves carry the sub-filter they route to;
/// the leaf prefixes always form a complete prefix-free cover of the
/// fingerprint space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexTree {
    fingerprint_bits: u8,
    nodes: Vec<Node>,
    version: u64,
}

impl IndexTree {
    /// A single root leaf.
    pub fn new(fingerprint_bits: u8) -> Self {
        IndexTree {
            fingerprint_bits,
            nodes: vec![Node::Leaf(SubFilterId::ROOT)],
            version: 0,
        }
    }

    /// Rebuilds a tree from its leaf set.
    pub fn from_leaves(fingerprint_bits: u8, leaves: &[SubFilterId]) -> Result<Self, FilterError> {
        let mut tree = IndexTree::new(fingerprint_bits);
        for &leaf in leaves {
            for depth in 0..leaf.len() {
                let ancestor = SubFilterId::new(leaf.bits() >> (leaf.len() - depth), depth)
                    .expect("ancestor of a valid prefix");
                if tree.leaf_node(ancestor).is_some() {
                    tree.split(ancestor)?;
                }
            }
        }
        let mut have = tree.leaves();
        let mut want = leaves.to_vec();
        have.sort();
        want.sort();
        if have != want {
            return Err(FilterError::MalformedRecord(
                "leaf set is not a complete prefix-free cover".into(),
            ));
        }
        Ok(tree)
    }

    pub fn fingerprint_bits(&self) -> u8 {
        self.fingerprint_bits
    }

    /// Incremented on every split.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Walks the fingerprint MSB-first, left on 0 and right on 1.
    pub fn locate(&self, fp: Fingerprint) -> SubFilterId {
        let mut node = 0;
        let mut depth = 0;
        loop {
            match &self.nodes[node] {
                Node::Leaf(id) => return *id,
                Node::Internal(children) => {
                    node = children[fp.bit(depth, self.fingerprint_bits) as usize];
                    depth += 1;
                }
            }
        }
    }

    fn leaf_node(&self, id: SubFilterId) -> Option<usize> {
        let mut node = 0;
        for depth in 0..=id.len() {
            match &self.nodes[node] {
                Node::Leaf(leaf) => return (*leaf == id).then_some(node),
                Node::Internal(children) if depth < id.len() => node = children[id.bit(depth) as usize],
                Node::Internal(_) => return None,
            }
        }
        None
    }

    pub fn contains_leaf(&self, id: SubFilterId) -> bool {
        self.leaf_node(id).is_some()
    }

    /// Replaces leaf `id` by an internal node with two leaf children.
    pub fn split(&mut self, id: SubFilterId) -> Result<(SubFilterId, SubFilterId), FilterError> {
        if id.len() + 1 >= self.fingerprint_bits {
            return Err(FilterError::MaxDepthReached(id));
        }
        let node = self.leaf_node(id).ok_or(FilterError::UnknownSubFilter(id))?;
        let (left, right) = (id.child(0), id.child(1));
        let base = self.nodes.len();
        self.nodes.push(Node::Leaf(left));
        self.nodes.push(Node::Leaf(right));
        self.nodes[node] = Node::Internal([base, base + 1]);
        self.version += 1;
        Ok((left, right))
    }

    /// Leaf ids in left-to-right order.
    pub fn leaves(&self) -> Vec<SubFilterId> {
        let mut out = Vec::new();
        let mut stack = vec![0];
        while let Some(node) = stack.pop() {
            match &self.nodes[node] {
                Node::Leaf(id) => out.push(*id),
                Node::Internal([l, r]) => {
                    stack.push(*r);
                    stack.push(*l);
                }
            }
        }
        out
    }

    pub fn depth(&self) -> u8 {
        self.leaves().iter().map(|l| l.len()).max().unwrap_or(0)
    }
}
