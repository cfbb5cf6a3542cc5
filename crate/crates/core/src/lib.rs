pub mod compiler;
pub mod lang;
pub mod library;
pub mod runtime;
pub mod tools;
