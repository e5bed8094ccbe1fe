//! Book chapters are attached here later so their snippets run as doc-tests.
