// mdbook cannot run the listings against a workspace crate, so every chapter
// is pulled in here and `cargo test -p handbooster-book` runs them as
// doc-tests. One module per chapter keeps failures traceable.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/poses.md")]
pub mod poses {}
#[doc = include_str!("src/labeling.md")]
pub mod labeling {}
#[doc = include_str!("src/sampling.md")]
pub mod sampling {}
#[doc = include_str!("src/validation.md")]
pub mod validation {}
#[doc = include_str!("src/rendering.md")]
pub mod rendering {}
#[doc = include_str!("src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("src/pipeline.md")]
pub mod pipeline {}
