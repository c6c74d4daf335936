//! Compiles and runs every code listing of the guide in `book/src` as a
//! doc-test, one module per chapter so a failure names its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}
#[doc = include_str!("../../../book/src/integration.md")]
pub mod integration {}
#[doc = include_str!("../../../book/src/populations.md")]
pub mod populations {}
#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}
#[doc = include_str!("../../../book/src/value_function.md")]
pub mod value_function {}
#[doc = include_str!("../../../book/src/studies.md")]
pub mod studies {}
