//! Core library for tracking how news outlets cover the day's stories.
//!
//! Pipeline: [`ingestion`] collects front-page articles, [`annotation`]
//! labels them through a chat-model provider, [`events`] clusters each day
//! into ranked events, [`aggregation`] answers the dashboard's queries and
//! [`review`] keeps humans in the loop. Everything persists in [`store`].

pub mod aggregation;
pub mod annotation;
pub mod events;
pub mod ingestion;
pub mod model;
pub mod pipeline;
pub mod review;
pub mod store;
pub mod synth;
pub mod taxonomy;

pub use model::{
    Annotation, Article, ArticleId, ArticleSentences, ArticleType, LeanLabel, NodeId, OrdinalScale, Provenance,
    Publisher, PublisherId, ScaleDimension, Sentence, SentenceType, ToneLabel,
};
pub use store::{Snapshot, Store, StoreError};
pub use taxonomy::{Level, Taxonomy, TaxonomyNode};
