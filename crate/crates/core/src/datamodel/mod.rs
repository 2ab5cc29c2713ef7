//! Domain types, file ingestion, k-core filtering and the leave-last-out split.

mod embeddings;
mod interactions;
mod items;

pub use embeddings::{
    ids_path_for, load_embeddings, read_matrix_block, save_embeddings, write_matrix_block,
    EmbeddingSet, EMBEDDING_MAGIC,
};
pub use interactions::{
    k_core_filter, leave_last_out_split, load_interactions, save_interactions, Interaction,
    InteractionLog, SplitDataset, UserSplit,
};
pub use items::{load_items, save_items, ItemCatalog, ItemRecord};
