//! Synthetic corpora, token mappings and dataset formats.

mod dataset;
mod generate;
mod mapping;
mod vocab;

pub use dataset::{
    format_dataset, load_dataset, parse_dataset, save_dataset, segment, split_dataset, vote,
    Example, Label, LabelKind, LabeledDataset, LoadedDataset,
};
pub use generate::{
    gen_motif_task, gen_parens, gen_uniform, max_depth, read_corpus, write_corpus, Corpus,
    CorpusKind, CorpusSpec, MotifTask,
};
pub use mapping::{
    inject_tokens, make_mapping, read_injection, read_mapping, write_mapping, Mapping, MappingKind,
};
pub use vocab::Vocab;
