//! Runs every code snippet in the book as a doc-test. Chapters are added
//! here as they are written.
