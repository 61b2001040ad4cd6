//! Name-keyed constructors for pluggable strategies.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

type Ctor<A, T> = Box<dyn Fn(&A) -> Result<Box<T>> + Send + Sync>;

/// Maps strategy names to constructors taking arguments `A` and producing
/// boxed trait objects `T`.
pub struct Registry<A, T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Ctor<A, T>>,
}

impl<A, T: ?Sized> Registry<A, T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `ctor` under `name`, replacing any earlier entry.
    pub fn register<F>(&mut self, name: &str, ctor: F) -> &mut Self
    where
        F: Fn(&A) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.entries.insert(name.to_string(), Box::new(ctor));
        self
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn build(&self, name: &str, args: &A) -> Result<Box<T>> {
        match self.entries.get(name) {
            Some(ctor) => ctor(args),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            }),
        }
    }
}
