//! Radix (PATRICIA-style) trie over byte strings.
//!
//! Edges carry whole label fragments and single-child chains are collapsed,
//! so a lookup touches at most one node per branching point. The query that
//! matters for code resolution is [`PrefixTrie::prefixes_of`]: every stored
//! key that is a prefix of a given code.

#[derive(Debug, Clone)]
struct TrieNode<V> {
    label: Vec<u8>,
    value: Option<V>,
    /// Sorted by first byte of the child label.
    children: Vec<(u8, usize)>,
}

#[derive(Debug, Clone)]
pub struct PrefixTrie<V> {
    nodes: Vec<TrieNode<V>>,
    len: usize,
}

impl<V> Default for PrefixTrie<V> {
    fn default() -> Self {
        Self::new()
    }
}

fn common_prefix_len(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

impl<V> PrefixTrie<V> {
    pub fn new() -> Self {
        PrefixTrie {
            nodes: vec![TrieNode {
                label: Vec::new(),
                value: None,
                children: Vec::new(),
            }],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn child(&self, node: usize, byte: u8) -> Option<usize> {
        let children = &self.nodes[node].children;
        children
            .binary_search_by_key(&byte, |(b, _)| *b)
            .ok()
            .map(|i| children[i].1)
    }

    fn push(&mut self, label: Vec<u8>, value: Option<V>) -> usize {
        self.nodes.push(TrieNode {
            label,
            value,
            children: Vec::new(),
        });
        self.nodes.len() - 1
    }

    fn link(&mut self, parent: usize, child: usize) {
        let byte = self.nodes[child].label[0];
        let children = &mut self.nodes[parent].children;
        match children.binary_search_by_key(&byte, |(b, _)| *b) {
            Ok(i) => children[i].1 = child,
            Err(i) => children.insert(i, (byte, child)),
        }
    }

    /// Returns the value slot for `key`, creating it with `default` if absent.
    pub fn entry_or_insert_with(&mut self, key: &[u8], default: impl FnOnce() -> V) -> &mut V {
        let mut node = 0;
        let mut rest = key;
        loop {
            if rest.is_empty() {
                if self.nodes[node].value.is_none() {
                    self.nodes[node].value = Some(default());
                    self.len += 1;
                }
                return self.nodes[node].value.as_mut().unwrap();
            }
            let Some(child) = self.child(node, rest[0]) else {
                let leaf = self.push(rest.to_vec(), Some(default()));
                self.len += 1;
                self.link(node, leaf);
                return self.nodes[leaf].value.as_mut().unwrap();
            };
            let shared = common_prefix_len(&self.nodes[child].label, rest);
            if shared == self.nodes[child].label.len() {
                node = child;
                rest = &rest[shared..];
                continue;
            }
            // Split the edge: parent -> mid(shared) -> child(remainder).
            let tail = self.nodes[child].label.split_off(shared);
            let head = std::mem::replace(&mut self.nodes[child].label, tail);
            let mid = self.push(head, None);
            self.link(mid, child);
            self.link(node, mid);
            node = mid;
            rest = &rest[shared..];
        }
    }

    pub fn insert(&mut self, key: &[u8], value: V) -> Option<V> {
        let mut fresh = Some(value);
        let slot = self.entry_or_insert_with(key, || fresh.take().unwrap());
        fresh.map(|v| std::mem::replace(slot, v))
    }

    pub fn get(&self, key: &[u8]) -> Option<&V> {
        let mut node = 0;
        let mut rest = key;
        while !rest.is_empty() {
            let child = self.child(node, rest[0])?;
            let label = &self.nodes[child].label;
            if !rest.starts_with(label) {
                return None;
            }
            rest = &rest[label.len()..];
            node = child;
        }
        self.nodes[node].value.as_ref()
    }

    /// Values of all keys that are prefixes of `text`, shortest key first.
    pub fn prefixes_of<'a>(&'a self, text: &'a [u8]) -> impl Iterator<Item = &'a V> + 'a {
        let mut node = Some(0);
        let mut rest = text;
        std::iter::from_fn(move || loop {
            let current = node?;
            node = rest.first().and_then(|&b| self.child(current, b)).and_then(|child| {
                let label = &self.nodes[child].label;
                rest.starts_with(label).then(|| {
                    rest = &rest[label.len()..];
                    child
                })
            });
            if let Some(value) = &self.nodes[current].value {
                return Some(value);
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prefix_queries() {
        let mut trie = PrefixTrie::new();
        for (i, key) in ["G2", "G20", "G201", "G2011", "G3", ""].iter().enumerate() {
            trie.insert(key.as_bytes(), i);
        }
        let hits: Vec<usize> = trie.prefixes_of(b"G2011").copied().collect();
        assert_eq!(hits, vec![5, 0, 1, 2, 3]);
        let hits: Vec<usize> = trie.prefixes_of(b"G25").copied().collect();
        assert_eq!(hits, vec![5, 0]);
        assert_eq!(trie.get(b"G201"), Some(&2));
        assert_eq!(trie.get(b"G21"), None);
        assert_eq!(trie.len(), 6);
    }

    #[test]
    fn edge_split_keeps_existing_keys() {
        let mut trie = PrefixTrie::new();
        trie.insert(b"abcdef", 1);
        trie.insert(b"abcxyz", 2);
        trie.insert(b"ab", 3);
        assert_eq!(trie.get(b"abcdef"), Some(&1));
        assert_eq!(trie.get(b"abcxyz"), Some(&2));
        assert_eq!(trie.get(b"ab"), Some(&3));
        assert_eq!(trie.get(b"abc"), None);
        assert_eq!(trie.insert(b"ab", 4), Some(3));
    }

    proptest! {
        #[test]
        fn prefixes_match_naive_scan(
            keys in prop::collection::vec("[AB]{0,4}", 0..20),
            text in "[AB]{0,6}",
        ) {
            let mut trie = PrefixTrie::new();
            for key in &keys {
                trie.insert(key.as_bytes(), key.clone());
            }
            let mut got: Vec<String> = trie.prefixes_of(text.as_bytes()).cloned().collect();
            let mut expected: Vec<String> = keys.iter().filter(|k| text.starts_with(k.as_str())).cloned().collect();
            expected.sort();
            expected.dedup();
            got.sort();
            prop_assert_eq!(got, expected);
        }
    }
}
