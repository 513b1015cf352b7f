use std::collections::HashMap;
use std::hash::Hash;

const NIL: usize = usize::MAX;

struct Node<K, V> {
    key: K,
    value: V,
    prev: usize,
    next: usize,
}

/// Least-recently-used map with O(1) get and insert. Nodes live in a slab
/// and form a doubly linked list from most (`head`) to least (`tail`)
/// recently used.
pub struct LruCache<K, V> {
    capacity: usize,
    index: HashMap<K, usize>,
    nodes: Vec<Node<K, V>>,
    head: usize,
    tail: usize,
}

impl<K: Hash + Eq + Clone, V: Clone> LruCache<K, V> {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "LRU capacity must be at least 1");
        Self {
            capacity,
            index: HashMap::with_capacity(capacity),
            nodes: Vec::with_capacity(capacity),
            head: NIL,
            tail: NIL,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, key: &K) -> bool {
        self.index.contains_key(key)
    }

    fn unlink(&mut self, i: usize) {
        let (prev, next) = (self.nodes[i].prev, self.nodes[i].next);
        if prev == NIL {
            self.head = next;
        } else {
            self.nodes[prev].next = next;
        }
        if next == NIL {
            self.tail = prev;
        } else {
            self.nodes[next].prev = prev;
        }
    }

    fn push_front(&mut self, i: usize) {
        self.nodes[i].prev = NIL;
        self.nodes[i].next = self.head;
        if self.head != NIL {
            self.nodes[self.head].prev = i;
        }
        self.head = i;
        if self.tail == NIL {
            self.tail = i;
        }
    }

    /// Looks up `key`, marking it most recently used.
    pub fn get(&mut self, key: &K) -> Option<V> {
        let i = *self.index.get(key)?;
        self.unlink(i);
        self.push_front(i);
        Some(self.nodes[i].value.clone())
    }

    /// Inserts or replaces `key` as most recently used, evicting the least
    /// recently used entry when full. Returns the evicted key.
    pub fn insert(&mut self, key: K, value: V) -> Option<K> {
        if let Some(&i) = self.index.get(&key) {
            self.nodes[i].value = value;
            self.unlink(i);
            self.push_front(i);
            return None;
        }
        if self.nodes.len() < self.capacity {
            self.nodes.push(Node {
                key: key.clone(),
                value,
                prev: NIL,
                next: NIL,
            });
            let i = self.nodes.len() - 1;
            self.index.insert(key, i);
            self.push_front(i);
            return None;
        }
        // Reuse the tail node's slot.
        let i = self.tail;
        self.unlink(i);
        let old = std::mem::replace(&mut self.nodes[i].key, key.clone());
        self.nodes[i].value = value;
        self.index.remove(&old);
        self.index.insert(key, i);
        self.push_front(i);
        Some(old)
    }

    /// Returns the cached value and `true` on a hit; otherwise computes,
    /// inserts, and returns `false`.
    pub fn get_or_insert_with(&mut self, key: K, compute: impl FnOnce() -> V) -> (V, bool) {
        match self.get(&key) {
            Some(v) => (v, true),
            None => {
                let v = compute();
                self.insert(key, v.clone());
                (v, false)
            }
        }
    }

    /// Like [`get_or_insert_with`](Self::get_or_insert_with), but a failed
    /// computation inserts nothing.
    pub fn get_or_try_insert_with<E>(
        &mut self,
        key: K,
        compute: impl FnOnce() -> Result<V, E>,
    ) -> Result<(V, bool), E> {
        if let Some(v) = self.get(&key) {
            return Ok((v, true));
        }
        let v = compute()?;
        self.insert(key, v.clone());
        Ok((v, false))
    }

    /// Keys from most to least recently used.
    pub fn keys_by_recency(&self) -> Vec<K> {
        let mut out = Vec::with_capacity(self.len());
        let mut i = self.head;
        while i != NIL {
            out.push(self.nodes[i].key.clone());
            i = self.nodes[i].next;
        }
        out
    }
}
