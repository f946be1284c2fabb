//! Synthetic X-ray baggage datasets and the metrics to score vision-language
//! models on them.

pub mod caption;
pub mod catalog;
pub mod composer;
pub mod eval;
pub mod instruct;
pub mod llm;
pub mod manifest;
pub mod pipeline;
pub mod render;
pub mod scene;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenes.md")]
    mod scenes {}
    #[doc = include_str!("../../../book/src/rendering.md")]
    mod rendering {}
    #[doc = include_str!("../../../book/src/captions.md")]
    mod captions {}
    #[doc = include_str!("../../../book/src/instructions.md")]
    mod instructions {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
