//! Doc-tested mirror of the book chapters in `book/src/`.
//!
//! Chapter code blocks run under `cargo test --doc`, keeping the guide in
//! sync with the library. Build the rendered book with `mdbook build book`.

// Placeholder until the book chapters land.
